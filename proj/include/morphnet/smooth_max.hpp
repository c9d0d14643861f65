#pragma once

// Exponentially weighted mean s_a(x) = sum x_i e^{a x_i} / sum e^{a x_i}.
// a > 0 leans to the max, a < 0 to the min, a = 0 is the arithmetic mean and
// a = +-inf is the hard max/min.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace morphnet {

template <class T>
struct SmoothMax {
  T value{};
  std::vector<T> weights;  // normalized e^{a x_i} / sum_j e^{a x_j}
};

/// Evaluates s_alpha over `x`, writing the normalized weights into `weights`
/// (same length as x). Exponents are shifted by the extremum for overflow
/// safety. Infinite alpha selects the lowest-index extremum with weight 1.
template <class T>
T smooth_max_into(std::span<const T> x, T alpha, std::span<T> weights) {
  if (x.empty()) throw std::invalid_argument("smooth_max of an empty set");
  if (weights.size() != x.size())
    throw std::invalid_argument("smooth_max weight buffer has the wrong length");

  if (std::isinf(alpha)) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
      if (alpha > 0 ? x[i] > x[best] : x[i] < x[best]) best = i;
    for (auto& w : weights) w = T(0);
    weights[best] = T(1);
    return x[best];
  }

  T shift = x[0];
  for (std::size_t i = 1; i < x.size(); ++i)
    if (alpha >= 0 ? x[i] > shift : x[i] < shift) shift = x[i];

  T norm = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    weights[i] = std::exp(alpha * (x[i] - shift));
    norm += weights[i];
  }
  T value = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    weights[i] /= norm;
    value += weights[i] * x[i];
  }
  return value;
}

template <class T>
SmoothMax<T> smooth_max(std::span<const T> x, T alpha) {
  for (T v : x)
    if (std::isnan(v)) throw std::invalid_argument("smooth_max input contains NaN");
  if (std::isnan(alpha)) throw std::invalid_argument("smooth_max alpha is NaN");
  SmoothMax<T> r;
  r.weights.resize(x.size());
  r.value = smooth_max_into<T>(x, alpha, r.weights);
  return r;
}

template <class T>
SmoothMax<T> smooth_max(const std::vector<T>& x, T alpha) {
  return smooth_max(std::span<const T>(x), alpha);
}

/// ds/dx_i = p_i (1 + alpha (x_i - s)); for infinite alpha the derivative is
/// the one-hot weight vector.
template <class T>
T smooth_max_partial(T x_i, T weight_i, T value, T alpha) {
  if (std::isinf(alpha)) return weight_i;
  return weight_i * (T(1) + alpha * (x_i - value));
}

/// Soft minimum with a non-negative sharpness: s_{-alpha}.
template <class T>
T softmin_into(std::span<const T> x, T alpha, std::span<T> weights) {
  return smooth_max_into<T>(x, -alpha, weights);
}

}  // namespace morphnet
