#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "morphnet/layer.hpp"

namespace morphnet {

template <class T>
struct LossValue {
  T value{};
  Tensor<T> grad;  // d value / d prediction
};

/// Mean over all elements of (pred - target)^2.
template <class T>
LossValue<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  pred.require_same_shape(target);
  if (pred.size() == 0) throw ShapeError("mse of empty tensors");
  const T n = static_cast<T>(pred.size());
  LossValue<T> out{T(0), Tensor<T>(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    out.value += d * d;
    out.grad[i] = 2 * d / n;
  }
  out.value /= n;
  return out;
}

/// Row-wise softmax of an N x C tensor, shifted by the row maximum.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects N x C logits, got " + to_string(logits.shape()));
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = &logits[n * C];
    const T mx = *std::max_element(row, row + C);
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) z += p[n * C + c] = std::exp(row[c] - mx);
    for (std::size_t c = 0; c < C; ++c) p[n * C + c] /= z;
  }
  return p;
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
LossValue<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  const Tensor<T> p = softmax_rows(logits);
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != N) throw ShapeError("cross entropy: label count does not match batch");
  LossValue<T> out{T(0), p};
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= C) throw std::out_of_range("cross entropy: label out of range");
    const T* row = &logits[n * C];
    const T mx = *std::max_element(row, row + C);
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    out.value += std::log(z) + mx - row[labels[n]];
    out.grad[n * C + labels[n]] -= T(1);
  }
  out.value /= static_cast<T>(N);
  out.grad *= T(1) / static_cast<T>(N);
  return out;
}

}  // namespace morphnet
