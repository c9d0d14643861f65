#pragma once

// Randomised gradient checks for every layer kind and loss.

#include <string>
#include <vector>

#include "morphnet/gradcheck.hpp"
#include "morphnet/model.hpp"

namespace morphnet {

struct GradCase {
  std::string kind;
  double alpha = 1.0;
  bool nonintersect = false;
  bool dnc = false;

  std::string label() const {
    std::string s = kind;
    if (kind == "shm" || kind == "shm-single" || kind == "gc1" || kind == "gc2") s += " alpha=" + format_number(alpha);
    if (nonintersect) s += " nonintersect";
    if (dnc) s += " dnc";
    return s;
  }
};

inline const std::vector<std::string>& gradcheck_kinds() {
  static const std::vector<std::string> k{"erosion", "dilation", "hm-dual", "hm-single", "shm", "shm-single",
                                          "conv",    "gc1",      "gc2",     "batchnorm", "dense", "maxpool",
                                          "relu",    "mse",      "ce"};
  return k;
}

namespace detail {

inline Tensor<double> random_tensor(const Shape& s, Rng& rng, double sd = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = rng.normal(0, sd);
  return t;
}

inline GradReport check_loss(const std::string& kind, Rng& rng) {
  const std::size_t N = 1 + rng.below(4), K = 2 + rng.below(5);
  const Tensor<double> x = random_tensor({N, K}, rng);
  std::vector<std::size_t> labels(N);
  for (auto& l : labels) l = rng.below(K);
  const Tensor<double> target = random_tensor({N, K}, rng);
  auto value = [&](const Tensor<double>& v) {
    return kind == "mse" ? mse(v, target).value : softmax_cross_entropy(v, labels).value;
  };
  const Tensor<double> g = kind == "mse" ? mse(x, target).grad : softmax_cross_entropy(x, labels).grad;
  return compare_gradients(g, numeric_gradient(value, x), "input");
}

inline LayerPtr<double> random_layer(const GradCase& c, Rng& rng, Shape& input) {
  const std::size_t batch = 2;
  if (c.kind == "batchnorm") {
    const std::size_t C = 1 + rng.below(3);
    input = rng.below(2) ? Shape{4, C, 3, 3} : Shape{6, C};
    auto bn = std::make_unique<BatchNormLayer<double>>(C);
    for (auto* p : bn->params()) p->value = random_tensor(p->value.shape(), rng);
    return bn;
  }
  if (c.kind == "dense") {
    const std::size_t I = 2 + rng.below(5), O = 1 + rng.below(4);
    input = {3, I};
    return std::make_unique<DenseLayer<double>>(random_tensor({O, I}, rng), random_tensor({O}, rng));
  }
  if (c.kind == "maxpool" || c.kind == "relu") {
    input = {batch, 2, 4 + rng.below(2), 4 + rng.below(2)};
    if (c.kind == "relu") return std::make_unique<ReLULayer<double>>();
    return std::make_unique<MaxPoolLayer<double>>();
  }
  FilterSpec fs{1 + rng.below(2), 1 + rng.below(2), 2 + rng.below(2), rng.below(2)};
  input = {batch, fs.in_ch, 4 + rng.below(2), 4 + rng.below(2)};
  const Shape bank{fs.out_ch, fs.in_ch, fs.size, fs.size};
  auto w = [&] { return random_tensor(bank, rng); };
  if (c.kind == "erosion") return std::make_unique<ErosionLayer<double>>(fs, w());
  if (c.kind == "dilation") return std::make_unique<DilationLayer<double>>(fs, w(), rng.below(2) == 1);
  if (c.kind == "conv") return std::make_unique<Conv2dLayer<double>>(fs, w(), random_tensor({fs.out_ch}, rng));
  if (c.kind == "gc1") return std::make_unique<GC1Layer<double>>(fs, w(), c.alpha);
  if (c.kind == "gc2") return std::make_unique<GC2Layer<double>>(fs, w(), c.alpha);
  if (c.kind == "hm-single") return std::make_unique<SingleHitMissLayer<double>>(fs, w());
  if (c.kind == "shm-single") return std::make_unique<SingleHitMissLayer<double>>(fs, w(), c.alpha, 1.5);
  if (c.kind == "hm-dual" || c.kind == "shm") {
    HitMissOptions o;
    o.nonintersect = c.nonintersect;
    o.dnc = c.dnc;
    o.threshold = 0.0;
    if (c.kind == "shm") o.alpha = c.alpha, o.scale = 1.5;
    // Positive-shifted SEs keep some cells active when DNC is on.
    Tensor<double> h = w(), m = w();
    if (c.dnc) h += 0.5, m += 0.5;
    return std::make_unique<DualHitMissLayer<double>>(fs, std::move(h), std::move(m), o);
  }
  throw std::invalid_argument("no gradient check for layer kind '" + c.kind + "'");
}

}  // namespace detail

/// Checks `trials` random instances. Instances whose finite differences
/// straddle a min/max tie are redrawn, so every counted instance is smooth.
inline GradReport run_grad_case(const GradCase& c, std::size_t trials, Rng& rng,
                                std::size_t* redrawn = nullptr) {
  GradReport total;
  std::size_t redraws = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t attempt = 0;; ++attempt) {
      GradReport r;
      if (c.kind == "mse" || c.kind == "ce") {
        r = detail::check_loss(c.kind, rng);
      } else {
        Shape input;
        LayerPtr<double> layer;
        try {
          layer = detail::random_layer(c, rng, input);
        } catch (const LayerError&) {
          ++redraws;  // every cell masked; not a valid instance
          continue;
        }
        const Tensor<double> x = detail::random_tensor(input, rng);
        Tensor<double> up;
        try {
          up = detail::random_tensor(layer->output_shape(input), rng);
          r = check_layer(*layer, x, up, c.kind == "batchnorm" ? rng.below(2) == 0 : false);
        } catch (const LayerError&) {
          ++redraws;  // a perturbation masked every cell
          continue;
        }
      }
      if (r.kinks == 0 || attempt >= 100) {
        total.merge(r);
        break;
      }
      ++redraws;
    }
  }
  if (redrawn) *redrawn = redraws;
  return total;
}

/// The case list covered by the full gradient suite.
inline std::vector<GradCase> gradient_suite() {
  std::vector<GradCase> out;
  for (const char* k : {"erosion", "dilation", "hm-single", "conv", "batchnorm", "dense", "maxpool", "relu", "mse", "ce"})
    out.push_back({k});
  for (bool ni : {false, true})
    for (bool dnc : {false, true}) out.push_back({"hm-dual", 1.0, ni, dnc});
  for (double a : {0.5, 1.0}) {
    out.push_back({"shm", a});
    out.push_back({"shm", a, true, true});
    out.push_back({"shm-single", a});
  }
  for (double a : {0.0, 0.5, 1.0}) {
    out.push_back({"gc1", a});
    out.push_back({"gc2", a});
  }
  return out;
}

}  // namespace morphnet
