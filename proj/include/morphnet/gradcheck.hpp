#pragma once

// Central-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "morphnet/layer.hpp"

namespace morphnet {

struct NumericGradient {
  Tensor<double> grad;
  // 1 where the forward and backward one-sided slopes disagree, i.e. the
  // point sits on a kink (a min/max tie) and any subgradient is acceptable.
  Tensor<std::uint8_t> kink;
};

inline NumericGradient numeric_gradient(const std::function<double(const Tensor<double>&)>& f,
                                        Tensor<double> x, double step = 1e-5,
                                        double kink_tol = 1e-3) {
  NumericGradient out{Tensor<double>(x.shape()), Tensor<std::uint8_t>(x.shape())};
  const double f0 = f(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    const double fwd = (up - f0) / step, bwd = (f0 - down) / step;
    out.grad[i] = (up - down) / (2 * step);
    const double scale = std::max({1.0, std::abs(fwd), std::abs(bwd)});
    out.kink[i] = std::abs(fwd - bwd) > kink_tol * scale;
  }
  return out;
}

/// Finite differences of sum(f(x) * upstream) for a tensor-valued f. Output
/// differences are formed before the contraction, so outputs a perturbation
/// does not reach cancel exactly instead of leaving round-off.
inline NumericGradient numeric_vjp(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                   Tensor<double> x, const Tensor<double>& upstream,
                                   double step = 1e-5, double kink_tol = 1e-3) {
  NumericGradient out{Tensor<double>(x.shape()), Tensor<std::uint8_t>(x.shape())};
  const Tensor<double> y0 = f(x);
  y0.require_same_shape(upstream);
  auto contract = [&](const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * upstream[j];
    return s;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const Tensor<double> up = f(x);
    x[i] = keep - step;
    const Tensor<double> down = f(x);
    x[i] = keep;
    const double fwd = contract(up, y0) / step, bwd = contract(y0, down) / step;
    out.grad[i] = contract(up, down) / (2 * step);
    const double scale = std::max({1.0, std::abs(fwd), std::abs(bwd)});
    out.kink[i] = std::abs(fwd - bwd) > kink_tol * scale;
  }
  return out;
}

/// |a - n| / max(|a|, |n|), with the denominator floored so that components
/// that are zero up to round-off do not produce spurious ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  double max_rel = 0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  std::string worst;  // "<tensor>[index]" of the largest error

  bool ok(double tol) const { return checked > 0 && max_rel < tol; }

  void merge(const GradReport& o) {
    if (o.max_rel > max_rel || worst.empty()) {
      max_rel = std::max(max_rel, o.max_rel);
      if (!o.worst.empty()) worst = o.worst;
    }
    checked += o.checked;
    kinks += o.kinks;
  }
};

inline GradReport compare_gradients(const Tensor<double>& analytic, const NumericGradient& numeric,
                                    const std::string& label) {
  analytic.require_same_shape(numeric.grad);
  GradReport r;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (numeric.kink[i]) {
      ++r.kinks;
      continue;
    }
    ++r.checked;
    const double e = relative_error(analytic[i], numeric.grad[i]);
    if (e > r.max_rel || r.worst.empty()) {
      r.max_rel = std::max(r.max_rel, e);
      r.worst = label + "[" + std::to_string(i) + "]";
    }
  }
  return r;
}

/// Checks a layer's input and parameter gradients for the scalar loss
/// L = sum(forward(x) * upstream).
inline GradReport check_layer(Layer<double>& layer, const Tensor<double>& x,
                              const Tensor<double>& upstream, bool training = false,
                              double step = 1e-5) {
  const Context ctx{training, nullptr};
  auto run = [&](const Tensor<double>& in) {
    TapeRecord<double> tape;
    return layer.forward(in, tape, ctx);
  };

  TapeRecord<double> tape;
  layer.forward(x, tape, ctx);
  const Gradients<double> g = layer.backward(tape, upstream);

  GradReport report = compare_gradients(g.input, numeric_vjp(run, x, upstream, step), "input");
  const auto params = layer.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Param<double>& param = *params[p];
    const Tensor<double> saved = param.value;
    auto param_run = [&](const Tensor<double>& v) {
      param.value = v;
      Tensor<double> y = run(x);
      param.value = saved;
      return y;
    };
    report.merge(compare_gradients(g.params[p], numeric_vjp(param_run, saved, upstream, step), param.name));
  }
  return report;
}

}  // namespace morphnet
