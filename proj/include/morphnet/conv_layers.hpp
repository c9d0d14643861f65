#pragma once

// Cross-correlation (no filter flip) and the two generalized convolutions
// built from it by replacing the window sum with smooth min/max aggregations.

#include <cmath>
#include <string>
#include <vector>

#include "morphnet/morph_layers.hpp"

namespace morphnet {

template <class T>
class Conv2dLayer final : public FilterLayer<T> {
 public:
  Conv2dLayer(FilterSpec spec, Tensor<T> w, Tensor<T> bias)
      : FilterLayer<T>(spec), w_{"w", std::move(w)}, b_{"b", std::move(bias)} {
    this->check_bank(w_.value, "filter");
    if (b_.value.shape() != Shape{spec.out_ch})
      throw ShapeError("conv2d: bias must have shape [" + std::to_string(spec.out_ch) + "]");
  }
  Conv2dLayer(FilterSpec spec, Tensor<T> w)
      : Conv2dLayer(spec, std::move(w), Tensor<T>({spec.out_ch})) {}

  std::string kind() const override { return "conv"; }
  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  nlohmann::json to_json() const override { return this->base_json(); }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    tape.saved = this->patches(x);
    Tensor<T> out(this->output_shape(x.shape()));
    const std::size_t k = this->cells();
    const T* w = w_.value.data().data();
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, auto, auto, std::size_t o) {
      T acc = b_.value[o];
      for (std::size_t i = 0; i < k; ++i) acc += patch[i] * w[o * k + i];
      out[idx] = acc;
    });
    return out;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& grad_out) const override {
    this->check_tape(tape);
    const std::size_t k = this->cells();
    const std::size_t positions = tape.saved.dim(1) * tape.saved.dim(2);
    Tensor<T> gp(tape.saved.shape()), gw(this->bank_shape()), gb({this->spec_.out_ch});
    const T* w = w_.value.data().data();
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, std::size_t n,
                                      std::size_t p, std::size_t o) {
      const T g = grad_out[idx];
      if (g == T(0)) return;
      T* row = &gp[(n * positions + p) * k];
      for (std::size_t i = 0; i < k; ++i) {
        row[i] += g * w[o * k + i];
        gw[o * k + i] += g * patch[i];
      }
      gb[o] += g;
    });
    return {this->scatter(gp, tape.input_shape), {std::move(gw), std::move(gb)}};
  }

 private:
  Param<T> w_, b_;
};

/// Common machinery: per output, one or two smooth aggregations over products
/// z_i = f_i * w_i, each multiplied by the size of its support.
template <class T>
class GeneralizedConvLayer : public FilterLayer<T> {
 public:
  GeneralizedConvLayer(FilterSpec spec, Tensor<T> w, double alpha_min, double alpha_max)
      : FilterLayer<T>(spec), w_{"w", std::move(w)}, alpha_min_(alpha_min), alpha_max_(alpha_max) {
    this->check_bank(w_.value, "filter");
    if (std::isnan(alpha_min_) || std::isnan(alpha_max_))
      throw LayerError("generalized convolution alpha must not be NaN");
  }

  std::vector<Param<T>*> params() override { return {&w_}; }
  double alpha_min() const { return alpha_min_; }
  double alpha_max() const { return alpha_max_; }

  nlohmann::json to_json() const override {
    auto j = this->base_json();
    j["alpha"] = alpha_min_;
    if (alpha_max_ != alpha_min_) j["alpha_max"] = alpha_max_;
    return j;
  }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    tape.saved = this->patches(x);
    tape.weights = {w_.value};
    supports(w_.value, tape.hit_mask, tape.miss_mask);
    Tensor<T> out(this->output_shape(x.shape()));
    const std::size_t k = this->cells();
    const T* w = w_.value.data().data();
    std::vector<T> z(k), p(k);
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, auto, auto, std::size_t o) {
      T y = 0;
      for (int part = 0; part < 2; ++part) {
        const std::uint8_t* mask = part == 0 ? &tape.hit_mask[o * k] : &tape.miss_mask[o * k];
        const std::size_t c = gather(patch, w + o * k, mask, z);
        if (c == 0) continue;
        y += static_cast<T>(c) * smooth_max_into<T>(std::span<const T>(z.data(), c), alpha(part),
                                                    std::span<T>(p.data(), c));
      }
      out[idx] = y;
    });
    return out;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& grad_out) const override {
    this->check_tape(tape);
    const std::size_t k = this->cells();
    const std::size_t positions = tape.saved.dim(1) * tape.saved.dim(2);
    Tensor<T> gp(tape.saved.shape()), gw(this->bank_shape());
    const T* w = tape.weights[0].data().data();
    std::vector<T> z(k), p(k);
    std::vector<std::uint32_t> cell(k);
    this->each_output(tape.saved, [&](const T* patch, std::size_t idx, std::size_t n,
                                      std::size_t pos, std::size_t o) {
      const T g = grad_out[idx];
      T* row = &gp[(n * positions + pos) * k];
      for (int part = 0; part < 2; ++part) {
        const std::uint8_t* mask = part == 0 ? &tape.hit_mask[o * k] : &tape.miss_mask[o * k];
        std::size_t c = 0;
        for (std::size_t i = 0; i < k; ++i)
          if (mask[i]) z[c] = patch[i] * w[o * k + i], cell[c++] = static_cast<std::uint32_t>(i);
        if (c == 0) continue;
        const T a = alpha(part);
        const T s = smooth_max_into<T>(std::span<const T>(z.data(), c), a, std::span<T>(p.data(), c));
        for (std::size_t j = 0; j < c; ++j) {
          const T dz = g * static_cast<T>(c) * smooth_max_partial(z[j], p[j], s, a);
          const std::size_t i = cell[j];
          row[i] += dz * w[o * k + i];
          gw[o * k + i] += dz * patch[i];
        }
      }
    });
    return {this->scatter(gp, tape.input_shape), {std::move(gw)}};
  }

 protected:
  // part 0 aggregates with s_{-alpha_min}, part 1 with s_{+alpha_max}.
  virtual void supports(const Tensor<T>& w, std::vector<std::uint8_t>& lo,
                        std::vector<std::uint8_t>& hi) const = 0;

 private:
  T alpha(int part) const {
    return part == 0 ? -static_cast<T>(alpha_min_) : static_cast<T>(alpha_max_);
  }

  std::size_t gather(const T* patch, const T* w, const std::uint8_t* mask, std::vector<T>& z) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < this->cells(); ++i)
      if (mask[i]) z[c++] = patch[i] * w[i];
    return c;
  }

  Param<T> w_;
  double alpha_min_, alpha_max_;
};

/// GC1: n_+ * s_{-a}(f w | w > 0) + n_- * s_{+a}(f w | w < 0). Zero weights
/// take no part; an empty partition contributes 0. At a = 0 this is exactly
/// the cross-correlation.
template <class T>
class GC1Layer final : public GeneralizedConvLayer<T> {
 public:
  GC1Layer(FilterSpec spec, Tensor<T> w, double alpha, double alpha_max)
      : GeneralizedConvLayer<T>(spec, std::move(w), alpha, alpha_max) {}
  GC1Layer(FilterSpec spec, Tensor<T> w, double alpha)
      : GC1Layer(spec, std::move(w), alpha, alpha) {}
  std::string kind() const override { return "gc1"; }

 protected:
  void supports(const Tensor<T>& w, std::vector<std::uint8_t>& lo,
                std::vector<std::uint8_t>& hi) const override {
    lo.resize(w.size());
    hi.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      lo[i] = w[i] > T(0);
      hi[i] = w[i] < T(0);
    }
  }
};

/// GC2: n * (s_{-a}(f w) + s_{+a}(f w)) over the full support. At a = 0 both
/// terms are the window mean, so the output is twice the cross-correlation.
template <class T>
class GC2Layer final : public GeneralizedConvLayer<T> {
 public:
  GC2Layer(FilterSpec spec, Tensor<T> w, double alpha, double alpha_max)
      : GeneralizedConvLayer<T>(spec, std::move(w), alpha, alpha_max) {}
  GC2Layer(FilterSpec spec, Tensor<T> w, double alpha)
      : GC2Layer(spec, std::move(w), alpha, alpha) {}
  std::string kind() const override { return "gc2"; }

 protected:
  void supports(const Tensor<T>& w, std::vector<std::uint8_t>& lo,
                std::vector<std::uint8_t>& hi) const override {
    lo.assign(w.size(), 1);
    hi.assign(w.size(), 1);
  }
};

}  // namespace morphnet
