#pragma once

// Sequential models described by a JSON spec:
//
//   {"input": [C, H, W], "loss": "mse" | "ce",
//    "layers": [{"kind": "hm-dual", "in": 1, "out": 2, "size": 28, ...}, ...]}
//
// Filter layers take "in", "out", "size", "pad" and an "init" entry that is
// either one init string for the whole bank or a list with one per output
// filter. Dual-SE kinds also accept "init_m" for the miss SE.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "morphnet/conv_layers.hpp"
#include "morphnet/image_io.hpp"
#include "morphnet/init.hpp"
#include "morphnet/losses.hpp"
#include "morphnet/morph_layers.hpp"
#include "morphnet/support_layers.hpp"

namespace morphnet {

using nlohmann::json;

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward pass produces a non-finite value.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string what, std::string layer)
      : std::runtime_error(std::move(what)), layer_(std::move(layer)) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

enum class LossKind { mse, cross_entropy };

inline LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "ce" || s == "cross_entropy") return LossKind::cross_entropy;
  throw SpecError("unknown loss '" + s + "'");
}

/// Loss of N x K logits against class labels; MSE compares with one-hot rows.
template <class T>
LossValue<T> compute_loss(LossKind kind, const Tensor<T>& logits,
                          const std::vector<std::size_t>& labels) {
  if (kind == LossKind::cross_entropy) return softmax_cross_entropy(logits, labels);
  Tensor<T> target(logits.shape());
  const std::size_t K = logits.dim(1);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= K) throw std::out_of_range("label exceeds output width");
    target[n * K + labels[n]] = T(1);
  }
  return mse(logits, target);
}

inline const std::vector<std::string>& filter_kinds() {
  static const std::vector<std::string> k{"conv",   "gc1",        "gc2",       "erosion", "dilation",
                                          "hm-dual", "hm-single", "shm",       "shm-single"};
  return k;
}

inline bool is_filter_kind(const std::string& k) {
  for (const auto& f : filter_kinds())
    if (f == k) return true;
  return false;
}

/// Output scale that keeps a soft transform's output spread equal to that of
/// its hard counterpart: sqrt(ratio(inf, n) / ratio(alpha, n)).
inline double soft_output_scale(double alpha, double n, const VarianceModel& model) {
  if (std::isinf(alpha)) return 1.0;
  return std::sqrt(model.ratio(VarianceModel::inf, n) / model.ratio(alpha, n));
}

struct BuildOptions {
  const VarianceModel* variance = nullptr;  // defaults() when null
  double first_sigma_f2 = 1.0;  // input variance seen by the first filter layer
};

template <class T>
class Model {
 public:
  struct Named {
    std::string name;
    Param<T>* param;
  };

  Model(json spec, std::vector<LayerPtr<T>> layers, LossKind loss, Shape input)
      : spec_(std::move(spec)), layers_(std::move(layers)), loss_(loss), input_(std::move(input)) {}

  const json& spec() const { return spec_; }
  LossKind loss() const { return loss_; }
  const Shape& input_shape() const { return input_; }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  Layer<T>* find(const std::string& name) {
    for (auto& l : layers_)
      if (l->name() == name) return l.get();
    return nullptr;
  }

  Shape output_shape(std::size_t batch) const {
    Shape s{batch};
    s.insert(s.end(), input_.begin(), input_.end());
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
  }

  Tensor<T> forward(const Tensor<T>& x, std::vector<TapeRecord<T>>& tapes, const Context& ctx) const {
    tapes.resize(layers_.size());
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i]->forward(h, tapes[i], ctx);
      if (!all_finite(h))
        throw DivergenceError("non-finite output from layer " + layers_[i]->name() + " (" +
                                  layers_[i]->kind() + ")",
                              layers_[i]->name());
    }
    return h;
  }

  Tensor<T> predict(const Tensor<T>& x) const {
    std::vector<TapeRecord<T>> tapes;
    return forward(x, tapes, Context{});
  }

  /// Parameter gradients per layer, in params() order.
  std::vector<std::vector<Tensor<T>>> backward(const std::vector<TapeRecord<T>>& tapes,
                                               Tensor<T> grad) const {
    std::vector<std::vector<Tensor<T>>> out(layers_.size());
    for (std::size_t i = layers_.size(); i-- > 0;) {
      Gradients<T> g = layers_[i]->backward(tapes[i], grad);
      out[i] = std::move(g.params);
      grad = std::move(g.input);
    }
    return out;
  }

  void commit(const std::vector<TapeRecord<T>>& tapes) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->commit(tapes[i]);
  }

  /// Trainable parameters named "<layer>.<param>", in layer order.
  std::vector<Named> parameters() { return collect(false); }
  std::vector<Named> buffers() { return collect(true); }

 private:
  std::vector<Named> collect(bool buffers) {
    std::vector<Named> out;
    for (auto& l : layers_)
      for (auto* p : buffers ? l->buffers() : l->params()) out.push_back({l->name() + "." + p->name, p});
    return out;
  }

  json spec_;
  std::vector<LayerPtr<T>> layers_;
  LossKind loss_;
  Shape input_;
};

namespace detail {

template <class V>
V get_or(const json& j, const char* key, V fallback) {
  return j.contains(key) ? j.at(key).get<V>() : fallback;
}

inline double json_alpha(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    throw SpecError(std::string("bad value for '") + key + "': " + s);
  }
  return v.get<double>();
}

inline std::string default_init(const std::string& kind, double alpha) {
  if (kind == "conv" || kind == "dense") return "kaiming";
  if (kind == "gc1" || kind == "gc2") return "gc:" + (std::isinf(alpha) ? std::string("inf") : format_number(alpha));
  return "shm:" + (std::isinf(alpha) ? std::string("inf") : format_number(alpha));
}

/// Resolves a scaled SHM init that leaves sigma_f^2 unspecified.
inline InitSpec resolve_init(const std::string& text, double sigma_f2) {
  InitSpec s = InitSpec::parse(text);
  if (s.kind == InitSpec::Kind::shm_scaled && std::count(text.begin(), text.end(), ':') == 1)
    s.p1 = sigma_f2;
  return s;
}

template <class T>
Tensor<T> init_bank(const json& init, const Shape& shape, Rng& rng, const VarianceModel& model,
                    double sigma_f2) {
  if (!init.is_array()) return initialize<T>(resolve_init(init.get<std::string>(), sigma_f2), shape, rng, model);
  if (init.size() != shape[0])
    throw SpecError("per-filter init list has " + std::to_string(init.size()) + " entries for " +
                    std::to_string(shape[0]) + " filters");
  Tensor<T> out(shape);
  Shape one = shape;
  one[0] = 1;
  const std::size_t per = numel(one);
  for (std::size_t o = 0; o < shape[0]; ++o) {
    // fan-in statistics use the full bank shape
    Tensor<T> full = initialize<T>(resolve_init(init[o].get<std::string>(), sigma_f2), shape, rng, model);
    std::copy_n(full.data().begin(), per, out.data().begin() + o * per);
  }
  return out;
}

}  // namespace detail

/// Builds one layer and returns it with the spec entry completed by resolved
/// defaults (init strings and soft output scales).
template <class T>
LayerPtr<T> build_layer(json& j, Rng& rng, const VarianceModel& model, double sigma_f2) {
  const std::string kind = j.at("kind").get<std::string>();
  if (is_filter_kind(kind)) {
    FilterSpec fs{j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>(),
                  j.at("size").get<std::size_t>(), detail::get_or<std::size_t>(j, "pad", 0)};
    const Shape bank{fs.out_ch, fs.in_ch, fs.size, fs.size};
    const double n = static_cast<double>(fs.in_ch * fs.size * fs.size);
    const bool soft_kind = kind == "shm" || kind == "shm-single" || kind == "gc1" || kind == "gc2";
    const double alpha = detail::json_alpha(j, "alpha", soft_kind ? 1.0 : std::numeric_limits<double>::infinity());
    if (soft_kind && alpha < 0) throw SpecError(kind + ": alpha must be >= 0");
    if (!j.contains("init")) j["init"] = detail::default_init(kind, alpha);
    auto bank_init = [&](const char* key) {
      return detail::init_bank<T>(j.contains(key) ? j.at(key) : j.at("init"), bank, rng, model, sigma_f2);
    };

    if (kind == "conv") {
      Tensor<T> w = bank_init("init");
      return std::make_unique<Conv2dLayer<T>>(fs, std::move(w));
    }
    if (kind == "gc1") return std::make_unique<GC1Layer<T>>(fs, bank_init("init"), alpha);
    if (kind == "gc2") return std::make_unique<GC2Layer<T>>(fs, bank_init("init"), alpha);
    if (kind == "erosion") return std::make_unique<ErosionLayer<T>>(fs, bank_init("init"));
    if (kind == "dilation")
      return std::make_unique<DilationLayer<T>>(fs, bank_init("init"), detail::get_or(j, "negate", true));

    double scale = 1.0;
    if (soft_kind) {
      if (!j.contains("scale") || j.at("scale") == "auto") j["scale"] = soft_output_scale(alpha, n, model);
      scale = j.at("scale").get<double>();
    }
    if (kind == "hm-single" || kind == "shm-single")
      return std::make_unique<SingleHitMissLayer<T>>(fs, bank_init("init"),
                                                     kind == "hm-single" ? std::numeric_limits<double>::infinity() : alpha,
                                                     scale);
    HitMissOptions opt;
    opt.nonintersect = detail::get_or(j, "nonintersect", false);
    opt.dnc = detail::get_or(j, "dnc", false);
    opt.threshold = detail::get_or(j, "th", 0.0);
    opt.alpha = kind == "shm" ? alpha : std::numeric_limits<double>::infinity();
    opt.scale = scale;
    Tensor<T> h = bank_init("init");
    Tensor<T> m = bank_init("init_m");
    return std::make_unique<DualHitMissLayer<T>>(fs, std::move(h), std::move(m), opt);
  }
  if (kind == "relu") return std::make_unique<ReLULayer<T>>();
  if (kind == "maxpool") return std::make_unique<MaxPoolLayer<T>>();
  if (kind == "flatten") return std::make_unique<FlattenLayer<T>>();
  if (kind == "dropout") return std::make_unique<DropoutLayer<T>>(j.at("p").get<double>());
  if (kind == "batchnorm")
    return std::make_unique<BatchNormLayer<T>>(j.at("channels").get<std::size_t>(),
                                               detail::get_or(j, "momentum", 0.1),
                                               detail::get_or(j, "eps", 1e-5));
  if (kind == "dense") {
    const std::size_t in = j.at("in").get<std::size_t>(), out = j.at("out").get<std::size_t>();
    if (!j.contains("init")) j["init"] = "kaiming";
    Tensor<T> w = detail::init_bank<T>(j.at("init"), {out, in}, rng, model, sigma_f2);
    return std::make_unique<DenseLayer<T>>(std::move(w), Tensor<T>({out}));
  }
  throw SpecError("unknown layer kind '" + kind + "'");
}

/// Builds a model, checking that consecutive layer shapes compose.
template <class T>
Model<T> build_model(json spec, Rng& rng, const BuildOptions& opt = {}) {
  const VarianceModel& model = opt.variance ? *opt.variance : VarianceModel::defaults();
  if (!spec.contains("input") || !spec.contains("layers") || !spec.contains("loss"))
    throw SpecError("model spec needs 'input', 'layers' and 'loss'");
  const auto input = spec.at("input").get<std::vector<std::size_t>>();
  if (input.size() != 3) throw SpecError("model input must be [C, H, W]");
  const LossKind loss = parse_loss(spec.at("loss").get<std::string>());

  std::vector<LayerPtr<T>> layers;
  Shape shape{1, input[0], input[1], input[2]};
  bool first_filter = true;
  for (std::size_t i = 0; i < spec["layers"].size(); ++i) {
    json& j = spec["layers"][i];
    try {
      const std::string kind = j.at("kind").get<std::string>();
      const double sigma_f2 = first_filter ? opt.first_sigma_f2 : 1.0;
      if (is_filter_kind(kind)) first_filter = false;
      LayerPtr<T> layer = build_layer<T>(j, rng, model, sigma_f2);
      layer->set_name(j.contains("name") ? j.at("name").get<std::string>() : "l" + std::to_string(i));
      shape = layer->output_shape(shape);
      layers.push_back(std::move(layer));
    } catch (const json::exception& e) {
      throw SpecError("layer " + std::to_string(i) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw SpecError("layer " + std::to_string(i) + ": " + e.what());
    }
  }
  if (shape.size() != 2) throw SpecError("model must end in an N x K output, got " + to_string(shape));
  return Model<T>(std::move(spec), std::move(layers), loss, Shape(input.begin(), input.end()));
}

// ---------------------------------------------------------------------------
// Presets

struct LayerChoice {
  std::string kind = "hm-dual";
  double alpha = std::numeric_limits<double>::quiet_NaN();  // NaN = kind default (1 for soft kinds)
  bool nonintersect = false;
  bool dnc = false;
  double th = 0.0;
  std::string init;  // empty = preset default
};

namespace detail {

inline json filter_entry(const LayerChoice& c, std::size_t in, std::size_t out, std::size_t size,
                         std::size_t pad) {
  json j{{"kind", c.kind}, {"in", in}, {"out", out}, {"size", size}, {"pad", pad}};
  const bool soft = c.kind == "shm" || c.kind == "shm-single" || c.kind == "gc1" || c.kind == "gc2";
  if (soft) j["alpha"] = std::isnan(c.alpha) ? json(1.0) : std::isinf(c.alpha) ? json("inf") : json(c.alpha);
  if (c.kind == "hm-dual" || c.kind == "shm") {
    j["nonintersect"] = c.nonintersect;
    j["dnc"] = c.dnc;
    j["th"] = c.th;
  }
  if (!c.init.empty()) j["init"] = c.init;
  return j;
}

}  // namespace detail

/// One layer of two full-image filters feeding the loss directly.
inline json synthetic_spec(const LayerChoice& c, std::size_t grid = 28) {
  json f = detail::filter_entry(c, 1, 2, grid, 0);
  if (c.init.empty()) {
    if (c.kind == "hm-dual" || c.kind == "shm") f["init"] = "const:0.01";
    else f["init"] = json::array({"const:-0.01", "const:0.01"});
  }
  f["name"] = "filters";
  return {{"input", {1, grid, grid}}, {"loss", "mse"}, {"layers", json::array({f, {{"kind", "flatten"}}})}};
}

/// Four filter layers with batchnorm and ReLU, two pooling stages, and a
/// dense head. `lite` halves every width.
inline json minivgg_spec(const LayerChoice& c, bool lite = true, std::size_t channels = 1,
                         std::size_t side = 28, std::size_t classes = 10) {
  const std::size_t a = lite ? 16 : 32, b = lite ? 32 : 64, d = lite ? 256 : 512;
  json layers = json::array();
  std::size_t in = channels, idx = 0;
  auto block = [&](std::size_t out) {
    json f = detail::filter_entry(c, in, out, 3, 1);
    f["name"] = "hmc" + std::to_string(++idx);
    layers.push_back(f);
    layers.push_back({{"kind", "batchnorm"}, {"channels", out}});
    layers.push_back({{"kind", "relu"}});
    in = out;
  };
  block(a);
  block(a);
  layers.push_back({{"kind", "maxpool"}});
  layers.push_back({{"kind", "dropout"}, {"p", 0.25}});
  block(b);
  block(b);
  layers.push_back({{"kind", "maxpool"}});
  layers.push_back({{"kind", "dropout"}, {"p", 0.25}});
  layers.push_back({{"kind", "flatten"}});
  const std::size_t flat = b * (side / 4) * (side / 4);
  layers.push_back({{"kind", "dense"}, {"in", flat}, {"out", d}});
  layers.push_back({{"kind", "batchnorm"}, {"channels", d}});
  layers.push_back({{"kind", "relu"}});
  layers.push_back({{"kind", "dropout"}, {"p", 0.5}});
  layers.push_back({{"kind", "dense"}, {"in", d}, {"out", classes}, {"name", "logits"}});
  return {{"input", {channels, side, side}}, {"loss", "ce"}, {"layers", layers}};
}

}  // namespace morphnet
