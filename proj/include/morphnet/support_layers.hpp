#pragma once

// Network plumbing around the filter layers.

#include <cmath>
#include <string>
#include <vector>

#include "morphnet/layer.hpp"

namespace morphnet {

template <class T>
class ReLULayer final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  nlohmann::json to_json() const override { return {{"kind", kind()}}; }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    tape.saved = x;
    return x.map([](T v) { return v > T(0) ? v : T(0); });
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& g) const override {
    this->check_tape(tape);
    tape.saved.require_same_shape(g);
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = tape.saved[i] > T(0) ? g[i] : T(0);
    return {std::move(dx), {}};
  }
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <class T>
class MaxPoolLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "maxpool"; }
  nlohmann::json to_json() const override { return {{"kind", kind()}}; }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4) throw ShapeError("maxpool: expected N x C x H x W, got " + to_string(in));
    if (in[2] < 2 || in[3] < 2) throw ShapeError("maxpool: spatial extent below 2 in " + to_string(in));
    return {in[0], in[1], in[2] / 2, in[3] / 2};
  }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    const Shape os = output_shape(x.shape());
    Tensor<T> out(os);
    tape.hit_index.resize(out.size());
    const std::size_t H = x.dim(2), W = x.dim(3);
    std::size_t idx = 0;
    for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane)
      for (std::size_t i = 0; i < os[2]; ++i)
        for (std::size_t j = 0; j < os[3]; ++j, ++idx) {
          std::size_t best = plane * H * W + 2 * i * W + 2 * j;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
              const std::size_t s = plane * H * W + (2 * i + a) * W + 2 * j + b;
              if (x[s] > x[best]) best = s;
            }
          out[idx] = x[best];
          tape.hit_index[idx] = static_cast<std::uint32_t>(best);
        }
    return out;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& g) const override {
    this->check_tape(tape);
    Tensor<T> dx(tape.input_shape);
    for (std::size_t i = 0; i < g.size(); ++i) dx[tape.hit_index[i]] += g[i];
    return {std::move(dx), {}};
  }
};

/// Batch normalization over channels (N x C x H x W) or features (N x F).
/// Training uses batch moments and records them for commit(); evaluation uses
/// the running moments.
template <class T>
class BatchNormLayer final : public Layer<T> {
 public:
  explicit BatchNormLayer(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : gamma_{"gamma", Tensor<T>({channels}, T(1))},
        beta_{"beta", Tensor<T>({channels})},
        mean_{"running_mean", Tensor<T>({channels})},
        var_{"running_var", Tensor<T>({channels}, T(1))},
        momentum_(momentum),
        eps_(eps) {
    if (channels == 0) throw LayerError("batchnorm needs at least one channel");
  }

  std::string kind() const override { return "batchnorm"; }
  std::size_t channels() const { return gamma_.value.size(); }
  Shape output_shape(const Shape& in) const override {
    layout(in);
    return in;
  }
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<Param<T>*> buffers() override { return {&mean_, &var_}; }
  nlohmann::json to_json() const override {
    return {{"kind", kind()}, {"channels", channels()}, {"momentum", momentum_}, {"eps", eps_}};
  }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    const auto [outer, inner] = layout(x.shape());
    const std::size_t C = channels(), m = outer * inner;
    std::vector<T> mean(C), var(C);
    if (ctx.training) {
      if (m < 2) throw LayerError("batchnorm: training needs more than one value per channel");
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0, s2 = 0;
        for_channel(x, c, outer, inner, [&](std::size_t i) { s += x[i]; });
        const double mu = s / static_cast<double>(m);
        for_channel(x, c, outer, inner, [&](std::size_t i) { s2 += (x[i] - mu) * (x[i] - mu); });
        mean[c] = static_cast<T>(mu);
        var[c] = static_cast<T>(s2 / static_cast<double>(m));
      }
    } else {
      for (std::size_t c = 0; c < C; ++c) mean[c] = mean_.value[c], var[c] = var_.value[c];
    }
    // stats: [mean | var | inv_std], aux: normalized input
    tape.stats.resize(3 * C);
    tape.aux = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const T inv = T(1) / std::sqrt(var[c] + static_cast<T>(eps_));
      tape.stats[c] = mean[c];
      tape.stats[C + c] = var[c];
      tape.stats[2 * C + c] = inv;
      for_channel(x, c, outer, inner, [&](std::size_t i) {
        tape.aux[i] = (x[i] - mean[c]) * inv;
        y[i] = gamma_.value[c] * tape.aux[i] + beta_.value[c];
      });
    }
    return y;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& g) const override {
    this->check_tape(tape);
    tape.aux.require_same_shape(g);
    const auto [outer, inner] = layout(g.shape());
    const std::size_t C = channels();
    const T m = static_cast<T>(outer * inner);
    Tensor<T> dx(g.shape()), dgamma({C}), dbeta({C});
    for (std::size_t c = 0; c < C; ++c) {
      T sum_g = 0, sum_gx = 0;
      for_channel(g, c, outer, inner, [&](std::size_t i) {
        sum_g += g[i];
        sum_gx += g[i] * tape.aux[i];
      });
      dgamma[c] = sum_gx;
      dbeta[c] = sum_g;
      const T scale = gamma_.value[c] * tape.stats[2 * C + c];
      if (tape.training) {
        for_channel(g, c, outer, inner, [&](std::size_t i) {
          dx[i] = scale * (g[i] - sum_g / m - tape.aux[i] * sum_gx / m);
        });
      } else {
        for_channel(g, c, outer, inner, [&](std::size_t i) { dx[i] = scale * g[i]; });
      }
    }
    return {std::move(dx), {std::move(dgamma), std::move(dbeta)}};
  }

  /// Running moments follow PyTorch: the variance update uses the unbiased
  /// batch estimate.
  void commit(const TapeRecord<T>& tape) override {
    this->check_tape(tape);
    if (!tape.training) return;
    const std::size_t C = channels();
    const auto [outer, inner] = layout(tape.input_shape);
    const T m = static_cast<T>(outer * inner);
    const T mom = static_cast<T>(momentum_);
    for (std::size_t c = 0; c < C; ++c) {
      mean_.value[c] = (1 - mom) * mean_.value[c] + mom * tape.stats[c];
      var_.value[c] = (1 - mom) * var_.value[c] + mom * tape.stats[C + c] * m / (m - 1);
    }
  }

 private:
  // {outer, inner}: values of channel c sit at o * C * inner + c * inner + j.
  std::pair<std::size_t, std::size_t> layout(const Shape& s) const {
    if ((s.size() != 2 && s.size() != 4) || s[1] != channels())
      throw ShapeError("batchnorm: expected N x " + std::to_string(channels()) +
                       " [x H x W] input, got " + to_string(s));
    return {s[0], s.size() == 4 ? s[2] * s[3] : 1};
  }

  template <class Fn>
  void for_channel(const Tensor<T>&, std::size_t c, std::size_t outer, std::size_t inner,
                   Fn fn) const {
    const std::size_t C = channels();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) fn((o * C + c) * inner + j);
  }

  Param<T> gamma_, beta_, mean_, var_;
  double momentum_, eps_;
};

/// y = x W^T + b with W of shape out x in.
template <class T>
class DenseLayer final : public Layer<T> {
 public:
  DenseLayer(Tensor<T> w, Tensor<T> b) : w_{"w", std::move(w)}, b_{"b", std::move(b)} {
    if (w_.value.rank() != 2 || b_.value.shape() != Shape{w_.value.dim(0)})
      throw ShapeError("dense: weights must be out x in with a bias of length out");
  }

  std::string kind() const override { return "dense"; }
  std::size_t in_features() const { return w_.value.dim(1); }
  std::size_t out_features() const { return w_.value.dim(0); }
  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  nlohmann::json to_json() const override {
    return {{"kind", kind()}, {"in", in_features()}, {"out", out_features()}};
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 2 || in[1] != in_features())
      throw ShapeError("dense: expected N x " + std::to_string(in_features()) + ", got " +
                       to_string(in));
    return {in[0], out_features()};
  }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    Tensor<T> y(output_shape(x.shape()));
    tape.saved = x;
    const std::size_t N = x.dim(0), I = in_features(), O = out_features();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        T acc = b_.value[o];
        for (std::size_t i = 0; i < I; ++i) acc += x[n * I + i] * w_.value[o * I + i];
        y[n * O + o] = acc;
      }
    return y;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& g) const override {
    this->check_tape(tape);
    const std::size_t N = tape.saved.dim(0), I = in_features(), O = out_features();
    Tensor<T> dx(tape.saved.shape()), dw(w_.value.shape()), db({O});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        const T go = g[n * O + o];
        if (go == T(0)) continue;
        db[o] += go;
        for (std::size_t i = 0; i < I; ++i) {
          dx[n * I + i] += go * w_.value[o * I + i];
          dw[o * I + i] += go * tape.saved[n * I + i];
        }
      }
    return {std::move(dx), {std::move(dw), std::move(db)}};
  }

 private:
  Param<T> w_, b_;
};

/// Inverted dropout: kept units are scaled by 1/(1-p) during training; the
/// layer is the identity in evaluation mode.
template <class T>
class DropoutLayer final : public Layer<T> {
 public:
  explicit DropoutLayer(double p) : p_(p) {
    if (!(p >= 0 && p < 1)) throw LayerError("dropout rate must be in [0, 1)");
  }

  std::string kind() const override { return "dropout"; }
  double rate() const { return p_; }
  Shape output_shape(const Shape& in) const override { return in; }
  nlohmann::json to_json() const override { return {{"kind", kind()}, {"p", p_}}; }

  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    if (!ctx.training || p_ == 0) return x;
    if (!ctx.rng) throw LayerError("dropout: training mode needs a random generator");
    tape.aux = Tensor<T>(x.shape());
    const T keep = static_cast<T>(1 / (1 - p_));
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      tape.aux[i] = ctx.rng->unit() >= p_ ? keep : T(0);
      y[i] = x[i] * tape.aux[i];
    }
    return y;
  }

  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& g) const override {
    this->check_tape(tape);
    if (tape.aux.size() == 0) return {g, {}};
    return {g * tape.aux, {}};
  }

 private:
  double p_;
};

template <class T>
class FlattenLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  nlohmann::json to_json() const override { return {{"kind", kind()}}; }
  Shape output_shape(const Shape& in) const override {
    if (in.empty()) throw ShapeError("flatten: scalar input");
    std::size_t rest = 1;
    for (std::size_t i = 1; i < in.size(); ++i) rest *= in[i];
    return {in[0], rest};
  }
  Tensor<T> forward(const Tensor<T>& x, TapeRecord<T>& tape, const Context& ctx) const override {
    this->claim(tape, x.shape(), ctx);
    return x.reshaped(output_shape(x.shape()));
  }
  Gradients<T> backward(const TapeRecord<T>& tape, const Tensor<T>& g) const override {
    this->check_tape(tape);
    return {g.reshaped(tape.input_shape), {}};
  }
};

}  // namespace morphnet
