#pragma once

// Differentiable hit-or-miss family: erosion ("hit"), dilation ("miss"), the
// dual-SE transform with optional non-intersection and don't-care masking,
// its soft variant, and the single-SE transform.
//
// All filter banks are laid out out_ch x in_ch x s x s and aggregate over the
// whole in_ch x s x s support, in correlation form: term(k) = f(x+a, y+b) (op)
// w(a, b).

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "morphnet/layer.hpp"
#include "morphnet/smooth_max.hpp"
#include "morphnet/tensor.hpp"

namespace morphnet {

struct FilterSpec {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t size = 3;
  std::size_t pad = 0;  // zero padding on each side
};

template <class T>
class FilterLayer : public Layer<T> {
 public:
  explicit FilterLayer(FilterSpec spec) : spec_(spec) {
    if (spec.in_ch == 0 || spec.out_ch == 0 || spec.size == 0)
      throw LayerError("filter bank extents must be positive");
  }

  const FilterSpec& filter() const { return spec_; }
  std::size_t cells() const { return spec_.in_ch * spec_.size * spec_.size; }
  Shape bank_shape() const { return {spec_.out_ch, spec_.in_ch, spec_.size, spec_.size}; }

  Shape output_shape(const Shape& in) const override {
    const WindowGeometry g = geometry(in);
    return {in[0], spec_.out_ch, g.out_rows(), g.out_cols()};
  }

 protected:
  Padding padding() const {
    return spec_.pad ? Padding::zero(spec_.pad) : Padding::none();
  }

  WindowGeometry geometry(const Shape& in) const {
    if (in.size() != 4)
      throw ShapeError(this->kind() + ": expected N x C x H x W input, got " + to_string(in));
    if (in[1] != spec_.in_ch)
      throw ShapeError(this->kind() + ": expected " + std::to_string(spec_.in_ch) +
                       " input channels, got " + std::to_string(in[1]));
    return WindowGeometry(in[1], in[2], in[3], {spec_.size, spec_.size}, {1, 1}, padding());
  }

  Tensor<T> patches(const Tensor<T>& x) const {
    geometry(x.shape());
    return window_view(x, {spec_.size, spec_.size}, {1, 1}, padding());
  }

  Tensor<T> scatter(const Tensor<T>& patch_grad, const Shape& in) const {
    return window_scatter(patch_grad, in, {spec_.size, spec_.size}, {1, 1}, padding());
  }

  void check_bank(const Tensor<T>& w, const char* what) const {
    if (w.shape() != bank_shape())
      throw ShapeError(this->kind() + ": " + what + " has shape " + to_string(w.shape()) +
                       ", expected " + to_string(bank_shape()));
  }

  nlohmann::json base_json() const {
    return {{"kind", this->kind()},
            {"in", spec_.in_ch},
            {"out", spec_.out_ch},
            {"size", spec_.size},
            {"pad", spec_.pad}};
  }

  // Calls fn(patch, out_index, n, p, o) for every output element, in
  // batch-major order.
  template <class Fn>
  void each_output(const Tensor<T>& patches, Fn fn) const {
    const std::size_t n_batch = patches.dim(0);
    const std::size_t positions = patches.dim(1) * patches.dim(2);
    const std::size_t k = cells();
    for (std::size_t n = 0; n < n_batch; ++n)
      for (std::size_t p = 0; p < positions; ++p) {
        const T* patch = patches.data().data() + (n * positions + p) * k;
        for (std::size_t o = 0; o < spec_.out_ch; ++o)
          fn(patch, (n * spec_.out_ch + o) * positions + p, n, p, o);
      }
  }

  FilterSpec spec_;
};

namespace detail {

// Hard extremum over the cells where mask[k] holds (all cells if mask is
// null); lowest index wins ties.
template <class T, class Term>
std::uint32_t arg_extremum(std::size_t k, const std::uint8_t* mask, bool want_max, Term term,
                           T& value) {
  std::uint32_t best = TapeRecord<T>::npos;
  for (std::size_t i = 0; i < k; ++i) {
    if (mask && !mask[i]) continue;
    const T v = term(i);
    if (best == TapeRecord<T>::npos || (want_max ? v > value : v < value)) {
      value = v;
      best = static_cast<std::uint32_t>(i);
    }
  }
  return best;
}

inline std::size_t active_count(const std::uint8_t* mask, std::size_t k) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < k; ++i) c += mask[i] != 0;
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// min over the window of f - h.
template <class T>
class ErosionLayer final : public FilterLayer<T> {
 public:
  ErosionLayer(FilterSpec spec, Tensor<T> h) : FilterLayer<T>(spec), h_{"h", std::move(h)} {
    this->check_bank(h_.value, "hit SE");
  }

  std::string kind() const override { return "erosion"; }
  std::vector<Param<T>*> params() override { return {&h_}; }
  nlohmann::json to_json() const override { return this->base_json(); }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    tape.saved = this->patches(x);
    Tensor<T> out(this->output_shape(x.shape()));
    tape.hit_index.resize(out.size());
    const std::size_t k = this->cells();
    const T* h = h_.value.data().data();
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, auto, auto, std::size_t o) {
      const T* w = h + o * k;
      T v{};
      tape.hit_index[idx] = detail::arg_extremum<T>(
          k, nullptr, false, [&](std::size_t i) { return patch[i] - w[i]; }, v);
      out[idx] = v;
    });
    return out;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& grad_out) const override {
    this->check_tape(tape);
    const std::size_t k = this->cells();
    Tensor<T> gp(tape.saved.shape());
    Tensor<T> gh(this->bank_shape());
    this->each_output(tape.saved, [&](const T*, std::size_t idx, std::size_t n, std::size_t p,
                                      std::size_t o) {
      const std::size_t positions = tape.saved.dim(1) * tape.saved.dim(2);
      const std::uint32_t c = tape.hit_index[idx];
      gp[(n * positions + p) * k + c] += grad_out[idx];
      gh[o * k + c] -= grad_out[idx];
    });
    return {this->scatter(gp, tape.input_shape), {std::move(gh)}};
  }

 private:
  Param<T> h_;
};

/// max over the window of f + m; optionally negated, which is how the miss
/// term enters a hit-or-miss score and how it is used as a standalone feature.
template <class T>
class DilationLayer final : public FilterLayer<T> {
 public:
  DilationLayer(FilterSpec spec, Tensor<T> m, bool negate = false)
      : FilterLayer<T>(spec), m_{"m", std::move(m)}, negate_(negate) {
    this->check_bank(m_.value, "miss SE");
  }

  std::string kind() const override { return "dilation"; }
  bool negated() const { return negate_; }
  std::vector<Param<T>*> params() override { return {&m_}; }
  nlohmann::json to_json() const override {
    auto j = this->base_json();
    j["negate"] = negate_;
    return j;
  }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    tape.saved = this->patches(x);
    Tensor<T> out(this->output_shape(x.shape()));
    tape.miss_index.resize(out.size());
    const std::size_t k = this->cells();
    const T* m = m_.value.data().data();
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, auto, auto, std::size_t o) {
      const T* w = m + o * k;
      T v{};
      tape.miss_index[idx] = detail::arg_extremum<T>(
          k, nullptr, true, [&](std::size_t i) { return patch[i] + w[i]; }, v);
      out[idx] = negate_ ? -v : v;
    });
    return out;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& grad_out) const override {
    this->check_tape(tape);
    const std::size_t k = this->cells();
    const std::size_t positions = tape.saved.dim(1) * tape.saved.dim(2);
    Tensor<T> gp(tape.saved.shape());
    Tensor<T> gm(this->bank_shape());
    this->each_output(tape.saved, [&](const T*, std::size_t idx, std::size_t n, std::size_t p,
                                      std::size_t o) {
      const T g = negate_ ? -grad_out[idx] : grad_out[idx];
      const std::uint32_t c = tape.miss_index[idx];
      gp[(n * positions + p) * k + c] += g;
      gm[o * k + c] += g;
    });
    return {this->scatter(gp, tape.input_shape), {std::move(gm)}};
  }

 private:
  Param<T> m_;
  bool negate_;
};

// ---------------------------------------------------------------------------

struct HitMissOptions {
  bool nonintersect = false;  // each cell acts as hit or miss, not both
  bool dnc = false;           // cells with max(h, m) <= threshold are ignored
  double threshold = 0.0;
  double alpha = std::numeric_limits<double>::infinity();  // inf = hard min/max
  double scale = 1.0;  // output multiplier (soft variants)
};

/// Dual-SE hit-or-miss: hit = min over hit-active cells of (f - h), miss =
/// max over miss-active cells of (f + m), output = scale * (hit - miss). With
/// finite alpha the min/max become s_{-alpha}/s_{+alpha}.
///
/// Cell roles per output channel:
///   dnc:          max(h, m) <= threshold  -> neither term
///   nonintersect: h < m -> miss only; m < h -> hit only; h == m -> both
template <class T>
class DualHitMissLayer final : public FilterLayer<T> {
 public:
  DualHitMissLayer(FilterSpec spec, Tensor<T> h, Tensor<T> m, HitMissOptions opt = {})
      : FilterLayer<T>(spec), h_{"h", std::move(h)}, m_{"m", std::move(m)}, opt_(opt) {
    this->check_bank(h_.value, "hit SE");
    this->check_bank(m_.value, "miss SE");
    if (!(opt_.alpha >= 0)) throw LayerError("hit-or-miss alpha must be >= 0");
    if (!(opt_.scale > 0) || !std::isfinite(opt_.scale))
      throw LayerError("hit-or-miss output scale must be positive");
  }

  std::string kind() const override { return soft() ? "shm" : "hm-dual"; }
  bool soft() const { return !std::isinf(opt_.alpha); }
  const HitMissOptions& options() const { return opt_; }
  std::vector<Param<T>*> params() override { return {&h_, &m_}; }

  nlohmann::json to_json() const override {
    auto j = this->base_json();
    j["nonintersect"] = opt_.nonintersect;
    j["dnc"] = opt_.dnc;
    j["th"] = opt_.threshold;
    if (soft()) {
      j["alpha"] = opt_.alpha;
      j["scale"] = opt_.scale;
    }
    return j;
  }

  /// Per-channel activity masks for the current parameters.
  void masks(const Tensor<T>& h, const Tensor<T>& m, std::vector<std::uint8_t>& hit,
             std::vector<std::uint8_t>& miss) const {
    const std::size_t total = h.size();
    hit.assign(total, 1);
    miss.assign(total, 1);
    for (std::size_t i = 0; i < total; ++i) {
      if (opt_.dnc && std::max(h[i], m[i]) <= static_cast<T>(opt_.threshold)) {
        hit[i] = miss[i] = 0;
        continue;
      }
      if (opt_.nonintersect) {
        if (h[i] < m[i]) hit[i] = 0;
        if (m[i] < h[i]) miss[i] = 0;
      }
    }
    const std::size_t k = this->cells();
    for (std::size_t o = 0; o < this->spec_.out_ch; ++o) {
      if (detail::active_count(&hit[o * k], k) == 0)
        throw LayerError(kind() + ": every cell of hit SE " + std::to_string(o) + " is masked");
      if (detail::active_count(&miss[o * k], k) == 0)
        throw LayerError(kind() + ": every cell of miss SE " + std::to_string(o) + " is masked");
    }
  }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    masks(h_.value, m_.value, tape.hit_mask, tape.miss_mask);
    tape.saved = this->patches(x);
    tape.weights = {h_.value, m_.value};
    Tensor<T> out(this->output_shape(x.shape()));
    const std::size_t k = this->cells();
    const T* h = h_.value.data().data();
    const T* m = m_.value.data().data();
    const T scale = static_cast<T>(opt_.scale);

    if (!soft()) {
      tape.hit_index.resize(out.size());
      tape.miss_index.resize(out.size());
      this->each_output(tape.saved, [&](const T* patch, std::size_t idx, auto, auto,
                                        std::size_t o) {
        const T* wh = h + o * k;
        const T* wm = m + o * k;
        T hit{}, miss{};
        tape.hit_index[idx] = detail::arg_extremum<T>(
            k, &tape.hit_mask[o * k], false, [&](std::size_t i) { return patch[i] - wh[i]; }, hit);
        tape.miss_index[idx] = detail::arg_extremum<T>(
            k, &tape.miss_mask[o * k], true, [&](std::size_t i) { return patch[i] + wm[i]; }, miss);
        out[idx] = scale * (hit - miss);
      });
      return out;
    }

    const T alpha = static_cast<T>(opt_.alpha);
    std::vector<T> terms(k), weights(k);
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, auto, auto,
                                      std::size_t o) {
      const T hit = soft_term(patch, h + o * k, &tape.hit_mask[o * k], T(-1), -alpha, terms, weights);
      const T miss = soft_term(patch, m + o * k, &tape.miss_mask[o * k], T(1), alpha, terms, weights);
      out[idx] = scale * (hit - miss);
    });
    return out;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& grad_out) const override {
    this->check_tape(tape);
    const std::size_t k = this->cells();
    const std::size_t positions = tape.saved.dim(1) * tape.saved.dim(2);
    Tensor<T> gp(tape.saved.shape());
    Tensor<T> gh(this->bank_shape()), gm(this->bank_shape());
    const T scale = static_cast<T>(opt_.scale);

    if (!soft()) {
      this->each_output(tape.saved, [&](const T*, std::size_t idx, std::size_t n, std::size_t p,
                                        std::size_t o) {
        const T g = scale * grad_out[idx];
        T* row = &gp[(n * positions + p) * k];
        const std::uint32_t ch = tape.hit_index[idx], cm = tape.miss_index[idx];
        row[ch] += g;
        gh[o * k + ch] -= g;
        row[cm] -= g;
        gm[o * k + cm] -= g;
      });
      return {this->scatter(gp, tape.input_shape), {std::move(gh), std::move(gm)}};
    }

    const T alpha = static_cast<T>(opt_.alpha);
    const T* h = tape.weights[0].data().data();
    const T* m = tape.weights[1].data().data();
    std::vector<T> terms(k), weights(k);
    std::vector<std::uint32_t> cells(k);
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, std::size_t n,
                                      std::size_t p, std::size_t o) {
      const T g = scale * grad_out[idx];
      T* row = &gp[(n * positions + p) * k];
      // hit: d/dt s_{-alpha}(t), t = f - h
      {
        const std::size_t c = gather(patch, h + o * k, &tape.hit_mask[o * k], T(-1), terms, cells);
        const T s = smooth_max_into<T>(std::span<const T>(terms.data(), c), -alpha,
                                       std::span<T>(weights.data(), c));
        for (std::size_t j = 0; j < c; ++j) {
          const T d = g * smooth_max_partial(terms[j], weights[j], s, -alpha);
          row[cells[j]] += d;
          gh[o * k + cells[j]] -= d;
        }
      }
      // miss: -d/du s_{alpha}(u), u = f + m
      {
        const std::size_t c = gather(patch, m + o * k, &tape.miss_mask[o * k], T(1), terms, cells);
        const T s = smooth_max_into<T>(std::span<const T>(terms.data(), c), alpha,
                                       std::span<T>(weights.data(), c));
        for (std::size_t j = 0; j < c; ++j) {
          const T d = -g * smooth_max_partial(terms[j], weights[j], s, alpha);
          row[cells[j]] += d;
          gm[o * k + cells[j]] += d;
        }
      }
    });
    return {this->scatter(gp, tape.input_shape), {std::move(gh), std::move(gm)}};
  }

 private:
  std::size_t gather(const T* patch, const T* w, const std::uint8_t* mask, T sign,
                     std::vector<T>& terms, std::vector<std::uint32_t>& cells) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < this->cells(); ++i) {
      if (!mask[i]) continue;
      terms[c] = patch[i] + sign * w[i];
      cells[c++] = static_cast<std::uint32_t>(i);
    }
    return c;
  }

  T soft_term(const T* patch, const T* w, const std::uint8_t* mask, T sign, T alpha,
              std::vector<T>& terms, std::vector<T>& weights) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < this->cells(); ++i)
      if (mask[i]) terms[c++] = patch[i] + sign * w[i];
    return smooth_max_into<T>(std::span<const T>(terms.data(), c), alpha,
                              std::span<T>(weights.data(), c));
  }

  Param<T> h_, m_;
  HitMissOptions opt_;
};

// ---------------------------------------------------------------------------

/// Single-SE hit-or-miss: cells with w < 0 form the hit set, w >= 0 the miss
/// set; output = min_hit(f + w) - max_miss(f + w). An empty set contributes 0.
/// Finite alpha softens both aggregations.
template <class T>
class SingleHitMissLayer final : public FilterLayer<T> {
 public:
  SingleHitMissLayer(FilterSpec spec, Tensor<T> w,
                     double alpha = std::numeric_limits<double>::infinity(), double scale = 1.0)
      : FilterLayer<T>(spec), w_{"w", std::move(w)}, alpha_(alpha), scale_(scale) {
    this->check_bank(w_.value, "SE");
    if (!(alpha_ >= 0)) throw LayerError("hit-or-miss alpha must be >= 0");
  }

  std::string kind() const override { return soft() ? "shm-single" : "hm-single"; }
  bool soft() const { return !std::isinf(alpha_); }
  std::vector<Param<T>*> params() override { return {&w_}; }
  nlohmann::json to_json() const override {
    auto j = this->base_json();
    if (soft()) {
      j["alpha"] = alpha_;
      j["scale"] = scale_;
    }
    return j;
  }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    tape.saved = this->patches(x);
    tape.weights = {w_.value};
    const std::size_t k = this->cells();
    tape.hit_mask.resize(w_.value.size());
    for (std::size_t i = 0; i < w_.value.size(); ++i) tape.hit_mask[i] = w_.value[i] < T(0);
    tape.miss_mask.resize(w_.value.size());
    for (std::size_t i = 0; i < w_.value.size(); ++i) tape.miss_mask[i] = !tape.hit_mask[i];

    Tensor<T> out(this->output_shape(x.shape()));
    const T* w = w_.value.data().data();
    const T scale = static_cast<T>(scale_);
    if (!soft()) {
      tape.hit_index.resize(out.size());
      tape.miss_index.resize(out.size());
    }
    std::vector<T> terms(k), weights(k);
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, auto, auto, std::size_t o) {
      const T* wo = w + o * k;
      auto term = [&](std::size_t i) { return patch[i] + wo[i]; };
      T hit{}, miss{};
      if (!soft()) {
        tape.hit_index[idx] = detail::arg_extremum<T>(k, &tape.hit_mask[o * k], false, term, hit);
        tape.miss_index[idx] = detail::arg_extremum<T>(k, &tape.miss_mask[o * k], true, term, miss);
        if (tape.hit_index[idx] == TapeRecord<T>::npos) hit = 0;
        if (tape.miss_index[idx] == TapeRecord<T>::npos) miss = 0;
      } else {
        hit = soft_term(patch, wo, &tape.hit_mask[o * k], -static_cast<T>(alpha_), terms, weights);
        miss = soft_term(patch, wo, &tape.miss_mask[o * k], static_cast<T>(alpha_), terms, weights);
      }
      out[idx] = scale * (hit - miss);
    });
    return out;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& grad_out) const override {
    this->check_tape(tape);
    const std::size_t k = this->cells();
    const std::size_t positions = tape.saved.dim(1) * tape.saved.dim(2);
    Tensor<T> gp(tape.saved.shape());
    Tensor<T> gw(this->bank_shape());
    const T* w = tape.weights[0].data().data();
    const T scale = static_cast<T>(scale_);
    std::vector<T> terms(k), weights(k);
    std::vector<std::uint32_t> cells(k);
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, std::size_t n,
                                      std::size_t p, std::size_t o) {
      const T g = scale * grad_out[idx];
      T* row = &gp[(n * positions + p) * k];
      if (!soft()) {
        if (auto c = tape.hit_index[idx]; c != TapeRecord<T>::npos) {
          row[c] += g;
          gw[o * k + c] += g;
        }
        if (auto c = tape.miss_index[idx]; c != TapeRecord<T>::npos) {
          row[c] -= g;
          gw[o * k + c] -= g;
        }
        return;
      }
      for (int part = 0; part < 2; ++part) {
        const std::uint8_t* mask = part == 0 ? &tape.hit_mask[o * k] : &tape.miss_mask[o * k];
        const T a = part == 0 ? -static_cast<T>(alpha_) : static_cast<T>(alpha_);
        const T sign = part == 0 ? T(1) : T(-1);
        std::size_t c = 0;
        for (std::size_t i = 0; i < k; ++i)
          if (mask[i]) terms[c] = patch[i] + w[o * k + i], cells[c++] = static_cast<std::uint32_t>(i);
        if (c == 0) continue;
        const T s = smooth_max_into<T>(std::span<const T>(terms.data(), c), a,
                                       std::span<T>(weights.data(), c));
        for (std::size_t j = 0; j < c; ++j) {
          const T d = sign * g * smooth_max_partial(terms[j], weights[j], s, a);
          row[cells[j]] += d;
          gw[o * k + cells[j]] += d;
        }
      }
    });
    return {this->scatter(gp, tape.input_shape), {std::move(gw)}};
  }

 private:
  T soft_term(const T* patch, const T* w, const std::uint8_t* mask, T alpha,
              std::vector<T>& terms, std::vector<T>& weights) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < this->cells(); ++i)
      if (mask[i]) terms[c++] = patch[i] + w[i];
    if (c == 0) return T(0);
    return smooth_max_into<T>(std::span<const T>(terms.data(), c), alpha,
                              std::span<T>(weights.data(), c));
  }

  Param<T> w_;
  double alpha_;
  double scale_;
};

}  // namespace morphnet
