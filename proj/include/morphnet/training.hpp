#pragma once

// Mini-batch training loop and evaluation.

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "morphnet/datasets.hpp"
#include "morphnet/model.hpp"
#include "morphnet/optim.hpp"

namespace morphnet {

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();  // NaN without a test set
  // NaN test accuracies compare equal so resumed histories can be matched.
  friend bool operator==(const EpochStats& a, const EpochStats& b) {
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.epoch == b.epoch && same(a.train_loss, b.train_loss) && same(a.train_acc, b.train_acc) &&
           same(a.test_acc, b.test_acc);
  }
};

struct Metrics {
  double accuracy = 0;
  double loss = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

template <class T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t K = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t k = 1; k < K; ++k)
    if (logits[row * K + k] > logits[row * K + best]) best = k;
  return best;
}

/// Inference-mode metrics over the whole set, in fixed batch order.
template <class T>
Metrics evaluate(const Model<T>& model, const LabeledSet& data, std::size_t batch = 256) {
  if (data.size() == 0) throw std::invalid_argument("cannot evaluate on an empty set");
  const std::size_t K = model.output_shape(1)[1];
  Metrics m;
  m.confusion.assign(K, std::vector<std::size_t>(K, 0));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t correct = 0;
  double loss = 0;
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < data.size(); b += batch) {
    const std::size_t e = std::min(data.size(), b + batch);
    const Tensor<float> xb = data.gather(order, b, e, &labels);
    const Tensor<T> logits = model.predict(xb.template cast<T>());
    loss += static_cast<double>(compute_loss(model.loss(), logits, labels).value) * (e - b);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t p = argmax_row(logits, i);
      if (labels[i] >= K) throw std::out_of_range("label exceeds model output width");
      ++m.confusion[labels[i]][p];
      correct += p == labels[i];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  m.loss = loss / static_cast<double>(data.size());
  return m;
}

template <class T>
class Trainer {
 public:
  Trainer(Model<T>& model, OptimSpec spec, Rng rng)
      : model_(model), spec_(std::move(spec)), rng_(std::move(rng)) {
    spec_.validate();
    optimizer_ = make_optimizer<T>(spec_, model_);
  }

  Model<T>& model() { return model_; }
  const OptimSpec& spec() const { return spec_; }
  Optimizer<T>& optimizer() { return *optimizer_; }
  Rng& rng() { return rng_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochStats>& history() const { return history_; }

  void restore_progress(std::size_t epoch, std::vector<EpochStats> history, Rng rng) {
    epoch_ = epoch;
    history_ = std::move(history);
    rng_ = std::move(rng);
  }

  EpochStats run_epoch(const LabeledSet& train, const LabeledSet* test = nullptr) {
    if (train.size() == 0) throw std::invalid_argument("training set is empty");
    const std::size_t N = train.size();
    const std::size_t batch = spec_.batch_size == 0 ? N : std::min(spec_.batch_size, N);
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    if (batch < N) rng_.shuffle(order.begin(), order.end());

    const auto params = model_.parameters();
    const Context ctx{true, &rng_};
    std::vector<TapeRecord<T>> tapes;
    std::vector<std::size_t> labels;
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < N; b += batch) {
      const std::size_t e = std::min(N, b + batch);
      const Tensor<T> x = train.gather(order, b, e, &labels).template cast<T>();
      const Tensor<T> logits = model_.forward(x, tapes, ctx);
      LossValue<T> loss = compute_loss(model_.loss(), logits, labels);
      if (!std::isfinite(static_cast<double>(loss.value)))
        throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch_ + 1), "loss");
      loss_sum += static_cast<double>(loss.value) * (e - b);
      for (std::size_t i = 0; i < labels.size(); ++i) correct += argmax_row(logits, i) == labels[i];
      const auto grads = model_.backward(tapes, std::move(loss.grad));
      optimizer_->step(params, grads);
      model_.commit(tapes);
    }
    EpochStats s{++epoch_, loss_sum / N, static_cast<double>(correct) / N};
    if (test) s.test_acc = evaluate(model_, *test).accuracy;
    history_.push_back(s);
    return s;
  }

  /// Runs until spec().epochs have completed or the callback returns false.
  void train(const LabeledSet& data, const LabeledSet* test = nullptr,
             const std::function<bool(const EpochStats&)>& on_epoch = {}) {
    while (epoch_ < spec_.epochs) {
      const EpochStats s = run_epoch(data, test);
      if (on_epoch && !on_epoch(s)) break;
    }
  }

 private:
  Model<T>& model_;
  OptimSpec spec_;
  Rng rng_;
  std::unique_ptr<Optimizer<T>> optimizer_;
  std::size_t epoch_ = 0;
  std::vector<EpochStats> history_;
};

inline std::string history_csv(const std::vector<EpochStats>& h) {
  std::string out = "epoch,train_loss,train_acc,test_acc\n";
  auto f = [](double v) { return format_number(static_cast<float>(v)); };
  for (const auto& s : h)
    out += std::to_string(s.epoch) + "," + f(s.train_loss) + "," + f(s.train_acc) + "," + f(s.test_acc) + "\n";
  return out;
}

}  // namespace morphnet
