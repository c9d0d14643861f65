#pragma once

// Variance model of the smooth-max aggregation and the weight-initialization
// schemes built on it.

#include <cmath>
#include <iterator>
#include <tuple>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "morphnet/smooth_max.hpp"
#include "morphnet/tensor.hpp"

namespace morphnet {

/// Output/input variance ratio of s_alpha over n i.i.d. inputs, modeled as
/// a / n^b per |alpha|. The alpha = 0 entry is pinned to the exact mean law
/// (1, 1).
class VarianceModel {
 public:
  struct Entry {
    double a = 1.0;
    double b = 1.0;
  };

  static constexpr double inf = std::numeric_limits<double>::infinity();

  VarianceModel() { entries_[0.0] = {1.0, 1.0}; }

  /// Coefficients shipped with the library (fitted on unit-variance Gaussian
  /// inputs, n = 9 .. 576).
  static VarianceModel defaults() {
    VarianceModel m;
    m.set(0.5, 1.32, 0.95);
    m.set(1.0, 1.44, 0.74);
    m.set(2.0, 0.82, 0.32);
    m.set(inf, 0.60, 0.24);
    m.provenance_ = "table";
    return m;
  }

  void set(double alpha, double a, double b) {
    alpha = std::abs(alpha);
    if (!(a > 0.0) || !std::isfinite(a) || !std::isfinite(b))
      throw std::invalid_argument("variance model coefficients must be finite with a > 0");
    if (alpha == 0.0) {
      if (std::abs(a - 1.0) > 0.03 || std::abs(b - 1.0) > 0.03)
        throw std::invalid_argument("alpha = 0 entry must follow the 1/n mean law");
      return;  // stays exactly (1, 1)
    }
    entries_[alpha] = {a, b};
  }

  bool has(double alpha) const { return entries_.count(std::abs(alpha)) != 0; }
  Entry entry(double alpha) const { return entries_.at(std::abs(alpha)); }
  const std::map<double, Entry>& entries() const { return entries_; }

  const std::string& provenance() const { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }

  /// sigma'^2 for |alpha| and support size n, capped at 1 (a single element
  /// passes through unchanged). Between stored alphas the ratio is linearly
  /// interpolated in u = |alpha| / (1 + |alpha|), which maps [0, inf] to [0, 1].
  double ratio(double alpha, double n) const {
    if (n < 1.0) throw std::invalid_argument("variance ratio needs n >= 1");
    alpha = std::abs(alpha);
    auto eval = [n](const Entry& e) { return std::min(1.0, e.a / std::pow(n, e.b)); };
    if (auto it = entries_.find(alpha); it != entries_.end()) return eval(it->second);
    const double u = std::isinf(alpha) ? 1.0 : alpha / (1.0 + alpha);
    auto hi = entries_.upper_bound(alpha);
    if (hi == entries_.end()) return eval(std::prev(hi)->second);
    auto lo = std::prev(hi);
    const double ul = lo->first / (1.0 + lo->first);
    const double uh = std::isinf(hi->first) ? 1.0 : hi->first / (1.0 + hi->first);
    const double t = (u - ul) / (uh - ul);
    return (1.0 - t) * eval(lo->second) + t * eval(hi->second);
  }

  /// One `alpha a b` line per entry; alpha may be `inf`.
  std::string to_text() const {
    std::ostringstream os;
    os << "# alpha a b  (sigma'^2 = a / n^b)\n";
    os.precision(17);
    for (auto& [alpha, e] : entries_) {
      if (std::isinf(alpha)) os << "inf";
      else os << alpha;
      os << ' ' << e.a << ' ' << e.b << '\n';
    }
    return os.str();
  }

  static VarianceModel from_text(const std::string& text) {
    VarianceModel m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      std::istringstream ls(line);
      std::string alpha_s;
      double a = 0, b = 0;
      if (!(ls >> alpha_s >> a >> b))
        throw std::invalid_argument("malformed variance model line: " + line);
      const double alpha = (alpha_s == "inf" || alpha_s == "+inf") ? inf : std::stod(alpha_s);
      m.set(alpha, a, b);
    }
    m.provenance_ = "fitted";
    return m;
  }

 private:
  std::map<double, Entry> entries_;
  std::string provenance_ = "exact";
};

struct VarianceFit {
  double a = 0;
  double b = 0;
  std::vector<double> n;
  std::vector<double> ratio;  // measured Var(s_alpha(x)) / Var(x)
};

/// Support sizes (3k)^2 for k = 1..8.
inline std::vector<std::size_t> default_fit_sizes() {
  std::vector<std::size_t> n;
  for (std::size_t k = 1; k <= 8; ++k) n.push_back(9 * k * k);
  return n;
}

/// Fits ratio(n) = a / n^b. The log-log regression seeds a Gauss-Newton
/// refinement of the squared residuals in the original (linear) space.
inline std::pair<double, double> fit_power_law(const std::vector<double>& n,
                                               const std::vector<double>& ratio,
                                               bool refine_linear = true) {
  if (n.size() != ratio.size() || n.size() < 2)
    throw std::invalid_argument("power-law fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!(n[i] > 0) || !(ratio[i] > 0)) throw std::invalid_argument("power-law fit needs positive data");
    const double x = std::log(n[i]), y = std::log(ratio[i]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double den = m * sxx - sx * sx;
  if (std::abs(den) < 1e-12) throw std::domain_error("singular power-law fit (constant n)");
  const double slope = (m * sxy - sx * sy) / den;
  double a = std::exp((sy - slope * sx) / m);
  double b = -slope;
  if (!refine_linear) return {a, b};

  for (int iter = 0; iter < 100; ++iter) {
    // J^T J and J^T r for r_i = a n^-b - y_i.
    double jaa = 0, jab = 0, jbb = 0, ga = 0, gb = 0;
    for (std::size_t i = 0; i < n.size(); ++i) {
      const double p = std::pow(n[i], -b);
      const double r = a * p - ratio[i];
      const double da = p, db = -a * p * std::log(n[i]);
      jaa += da * da, jab += da * db, jbb += db * db;
      ga += da * r, gb += db * r;
    }
    const double det = jaa * jbb - jab * jab;
    if (std::abs(det) < 1e-300) break;
    const double step_a = (jbb * ga - jab * gb) / det;
    const double step_b = (jaa * gb - jab * ga) / det;
    a -= step_a, b -= step_b;
    if (!(a > 0)) throw std::domain_error("power-law refinement diverged");
    if (std::abs(step_a) < 1e-12 * a && std::abs(step_b) < 1e-12) break;
  }
  return {a, b};
}

/// Monte-Carlo estimate of Var(s_alpha(x)) / Var(x) for x ~ N(0, 1)^n at each
/// n, followed by a power-law fit.
inline VarianceFit fit_variance_model(double alpha, const std::vector<std::size_t>& sizes,
                                      std::size_t trials, Rng& rng, bool refine_linear = true) {
  if (trials < 10000) throw std::invalid_argument("fit_variance_model needs >= 1e4 trials per point");
  VarianceFit fit;
  std::vector<double> x, w, s(trials);
  for (std::size_t n : sizes) {
    x.resize(n);
    w.resize(n);
    for (std::size_t t = 0; t < trials; ++t) {
      for (auto& v : x) v = rng.normal();
      s[t] = smooth_max_into<double>(x, alpha, w);
    }
    fit.n.push_back(static_cast<double>(n));
    fit.ratio.push_back(sample_variance<double>(s));
  }
  std::tie(fit.a, fit.b) = fit_power_law(fit.n, fit.ratio, refine_linear);
  return fit;
}

/// Filter-weight variance for GC1/GC2 layers followed by ReLU:
/// 1 / (n^2 sigma'^2).
inline double gc_init_variance(double n, double alpha, const VarianceModel& model) {
  if (n < 1.0) throw std::invalid_argument("gc_init_variance needs n >= 1");
  return 1.0 / (n * n * model.ratio(alpha, n));
}

/// Variance of a half-normal draw relative to its scale parameter.
inline constexpr double half_normal_variance_ratio = 1.0 - 2.0 / std::numbers::pi;

/// Squared half-normal scale for hit and miss SEs:
/// (1/sigma_hn^2) (1/sigma'^2 - 1) sigma_f^2.
inline double shm_init_variance(double sigma_f2, double alpha, double n,
                                const VarianceModel& model) {
  if (!(sigma_f2 > 0.0)) throw std::invalid_argument("shm_init_variance needs sigma_f^2 > 0");
  const double r = model.ratio(alpha, n);
  if (r >= 1.0)
    throw std::domain_error(
        "variance ratio >= 1 leaves no room for SE spread; initialize with the "
        "alpha = inf entry and scale the transform output instead");
  return (1.0 / r - 1.0) / half_normal_variance_ratio * sigma_f2;
}

// ---------------------------------------------------------------------------

struct InitSpec {
  enum class Kind { constant, uniform, normal, half_normal, kaiming, shm_scaled, gc_scaled };
  Kind kind = Kind::constant;
  double p0 = 0.0;  // constant value / lo / stddev / alpha
  double p1 = 0.0;  // hi / sigma_f^2

  static InitSpec constant(double v) { return {Kind::constant, v, 0}; }
  static InitSpec uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static InitSpec normal(double sd) { return {Kind::normal, sd, 0}; }
  static InitSpec half_normal(double sd) { return {Kind::half_normal, sd, 0}; }
  static InitSpec kaiming() { return {Kind::kaiming, 0, 0}; }
  static InitSpec shm_scaled(double alpha, double sigma_f2 = 1.0) {
    return {Kind::shm_scaled, alpha, sigma_f2};
  }
  static InitSpec gc_scaled(double alpha) { return {Kind::gc_scaled, alpha, 0}; }

  /// Text form: const:V, uniform:LO:HI, normal:SD, halfnormal:SD, kaiming,
  /// shm:ALPHA[:SIGMA_F2], gc:ALPHA. ALPHA may be `inf`.
  static InitSpec parse(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : text) {
      if (ch == ':') parts.push_back(cur), cur.clear();
      else cur.push_back(ch);
    }
    parts.push_back(cur);
    auto num = [&](std::size_t i, double def) {
      if (i >= parts.size()) return def;
      const std::string& s = parts[i];
      if (s == "inf") return VarianceModel::inf;
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size()) throw std::invalid_argument("bad init parameter '" + s + "'");
      return v;
    };
    const std::string& k = parts[0];
    if (k == "const" || k == "constant") return constant(num(1, 0.0));
    if (k == "uniform") return uniform(num(1, -1.0), num(2, 1.0));
    if (k == "normal") return normal(num(1, 1.0));
    if (k == "halfnormal" || k == "half_normal") return half_normal(num(1, 1.0));
    if (k == "kaiming") return kaiming();
    if (k == "shm" || k == "shm_scaled") return shm_scaled(num(1, 1.0), num(2, 1.0));
    if (k == "gc" || k == "gc_scaled") return gc_scaled(num(1, 1.0));
    throw std::invalid_argument("unknown init spec '" + text + "'");
  }

  std::string to_string() const {
    auto f = [](double v) {
      if (std::isinf(v)) return std::string("inf");
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    switch (kind) {
      case Kind::constant: return "const:" + f(p0);
      case Kind::uniform: return "uniform:" + f(p0) + ":" + f(p1);
      case Kind::normal: return "normal:" + f(p0);
      case Kind::half_normal: return "halfnormal:" + f(p0);
      case Kind::kaiming: return "kaiming";
      case Kind::shm_scaled: return "shm:" + f(p0) + ":" + f(p1);
      case Kind::gc_scaled: return "gc:" + f(p0);
    }
    return "?";
  }

  friend bool operator==(const InitSpec&, const InitSpec&) = default;
};

/// Fan-in of a parameter tensor laid out as out x in x kh x kw (or out x in).
inline std::size_t fan_in(const Shape& shape) {
  if (shape.size() < 2) return shape.empty() ? 1 : shape[0];
  std::size_t f = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) f *= shape[i];
  return f;
}

/// Target variance of the distribution an InitSpec draws from (the scale
/// parameter's square for half-normal kinds).
inline double init_scale_variance(const InitSpec& spec, const Shape& shape,
                                  const VarianceModel& model) {
  const double n = static_cast<double>(fan_in(shape));
  switch (spec.kind) {
    case InitSpec::Kind::kaiming: return 2.0 / n;
    case InitSpec::Kind::gc_scaled: return gc_init_variance(n, spec.p0, model);
    case InitSpec::Kind::shm_scaled:
      // SEs always use the max/min entry; finite alphas are handled by
      // scaling the transform output.
      return shm_init_variance(spec.p1, VarianceModel::inf, n, model);
    case InitSpec::Kind::normal:
    case InitSpec::Kind::half_normal: return spec.p0 * spec.p0;
    case InitSpec::Kind::uniform: return (spec.p1 - spec.p0) * (spec.p1 - spec.p0) / 12.0;
    case InitSpec::Kind::constant: return 0.0;
  }
  return 0.0;
}

template <class T>
Tensor<T> initialize(const InitSpec& spec, const Shape& shape, Rng& rng,
                     const VarianceModel& model = VarianceModel::defaults()) {
  Tensor<T> t(shape);
  switch (spec.kind) {
    case InitSpec::Kind::constant:
      for (auto& v : t.data()) v = static_cast<T>(spec.p0);
      break;
    case InitSpec::Kind::uniform:
      if (!(spec.p1 > spec.p0)) throw std::invalid_argument("uniform init needs lo < hi");
      for (auto& v : t.data()) v = static_cast<T>(rng.uniform(spec.p0, spec.p1));
      break;
    case InitSpec::Kind::normal:
    case InitSpec::Kind::kaiming:
    case InitSpec::Kind::gc_scaled: {
      const double sd = std::sqrt(init_scale_variance(spec, shape, model));
      for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, sd));
      break;
    }
    case InitSpec::Kind::half_normal:
    case InitSpec::Kind::shm_scaled: {
      const double sd = std::sqrt(init_scale_variance(spec, shape, model));
      for (auto& v : t.data()) v = static_cast<T>(rng.half_normal(sd));
      break;
    }
  }
  return t;
}

}  // namespace morphnet
