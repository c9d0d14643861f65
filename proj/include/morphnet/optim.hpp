#pragma once

// SGD with momentum (PyTorch convention: v = mu v + g, p -= lr v) and Adam.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "morphnet/model.hpp"

namespace morphnet {

struct OptimSpec {
  std::string kind = "sgd";
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 1000;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;

  void validate() const {
    if (kind != "sgd" && kind != "adam") throw SpecError("unknown optimizer '" + kind + "'");
    if (!(lr >= 0) || !std::isfinite(lr)) throw SpecError("learning rate must be finite and >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw SpecError("momentum must be in [0, 1)");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw SpecError("Adam betas must be in [0, 1)");
    if (!(eps > 0)) throw SpecError("Adam epsilon must be positive");
  }

  nlohmann::json to_json() const {
    return {{"kind", kind},   {"lr", lr},     {"momentum", momentum},     {"beta1", beta1},
            {"beta2", beta2}, {"eps", eps},   {"epochs", epochs},         {"batch_size", batch_size},
            {"seed", seed}};
  }
  static OptimSpec from_json(const nlohmann::json& j) {
    OptimSpec s;
    s.kind = j.at("kind");
    s.lr = j.at("lr");
    s.momentum = j.at("momentum");
    s.beta1 = j.at("beta1");
    s.beta2 = j.at("beta2");
    s.eps = j.at("eps");
    s.epochs = j.at("epochs");
    s.batch_size = j.at("batch_size");
    s.seed = j.at("seed");
    return s;
  }
};

template <class T>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  using Params = std::vector<typename Model<T>::Named>;
  using Grads = std::vector<std::vector<Tensor<T>>>;

  /// grads are grouped per layer in the order Model::parameters() visits them.
  virtual void step(const Params& params, const Grads& grads) = 0;

  /// Internal tensors keyed "<slot>.<param name>".
  std::vector<std::pair<std::string, Tensor<T>*>> state() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& [slot, tensors] : slots_)
      for (std::size_t i = 0; i < tensors.size(); ++i) out.push_back({slot + "." + names_[i], &tensors[i]});
    return out;
  }
  virtual nlohmann::json meta() const { return nlohmann::json::object(); }
  virtual void set_meta(const nlohmann::json&) {}

  void bind(const Params& params) {
    names_.clear();
    for (auto& p : params) names_.push_back(p.name);
    for (auto& [slot, tensors] : slots_) {
      tensors.clear();
      for (auto& p : params) tensors.emplace_back(p.param->value.shape());
    }
  }

 protected:
  explicit Optimizer(std::vector<std::string> slot_names) {
    for (auto& s : slot_names) slots_.push_back({s, {}});
  }

  template <class Fn>
  void each(const Params& params, const Grads& grads, Fn fn) {
    std::size_t k = 0;
    for (const auto& layer : grads)
      for (const auto& g : layer) {
        if (k >= params.size()) throw std::logic_error("more gradients than parameters");
        params[k].param->value.require_same_shape(g);
        fn(k, params[k].param->value, g);
        ++k;
      }
    if (k != params.size()) throw std::logic_error("gradient count does not match parameters");
  }

  std::vector<std::pair<std::string, std::vector<Tensor<T>>>> slots_;
  std::vector<std::string> names_;
};

template <class T>
class SGD final : public Optimizer<T> {
 public:
  SGD(double lr, double momentum) : Optimizer<T>({"velocity"}), lr_(lr), mu_(momentum) {}

  void step(const typename Optimizer<T>::Params& params,
            const typename Optimizer<T>::Grads& grads) override {
    const T lr = static_cast<T>(lr_), mu = static_cast<T>(mu_);
    this->each(params, grads, [&](std::size_t k, Tensor<T>& p, const Tensor<T>& g) {
      Tensor<T>& v = this->slots_[0].second[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        p[i] -= lr * v[i];
      }
    });
  }

 private:
  double lr_, mu_;
};

template <class T>
class Adam final : public Optimizer<T> {
 public:
  Adam(double lr, double b1, double b2, double eps)
      : Optimizer<T>({"m", "v"}), lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

  void step(const typename Optimizer<T>::Params& params,
            const typename Optimizer<T>::Grads& grads) override {
    ++t_;
    const double c1 = 1 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2_, static_cast<double>(t_));
    const T step = static_cast<T>(lr_ / c1), b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T root_c2 = static_cast<T>(std::sqrt(c2)), eps = static_cast<T>(eps_);
    this->each(params, grads, [&](std::size_t k, Tensor<T>& p, const Tensor<T>& g) {
      Tensor<T>& m = this->slots_[0].second[k];
      Tensor<T>& v = this->slots_[1].second[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        p[i] -= step * m[i] / (std::sqrt(v[i]) / root_c2 + eps);
      }
    });
  }

  nlohmann::json meta() const override { return {{"t", t_}}; }
  void set_meta(const nlohmann::json& j) override { t_ = j.at("t").get<std::uint64_t>(); }

 private:
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
};

template <class T>
std::unique_ptr<Optimizer<T>> make_optimizer(const OptimSpec& s, Model<T>& model) {
  s.validate();
  std::unique_ptr<Optimizer<T>> opt;
  if (s.kind == "sgd") opt = std::make_unique<SGD<T>>(s.lr, s.momentum);
  else opt = std::make_unique<Adam<T>>(s.lr, s.beta1, s.beta2, s.eps);
  opt->bind(model.parameters());
  return opt;
}

}  // namespace morphnet
