#pragma once

// Dense row-major tensor, seeded random numbers, and the sliding-window
// machinery shared by every morphological and convolutional layer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace morphnet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T = float>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + morphnet::to_string(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size())
      throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                       morphnet::to_string(shape_));
    return shape_[axis];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... I>
  T& operator()(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <class... I>
  const T& operator()(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  // Checked flat offset of a multi-index.
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw std::out_of_range("index rank " + std::to_string(idx.size()) +
                              " does not match tensor rank " +
                              std::to_string(shape_.size()));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis])
        throw std::out_of_range("index " + std::to_string(i) + " out of range on axis " +
                                std::to_string(axis) + " of " + morphnet::to_string(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
      throw ShapeError("cannot reshape " + morphnet::to_string(shape_) + " to " +
                       morphnet::to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  template <class Fn>
  Tensor map(Fn fn) const {
    Tensor out(shape_);
    std::transform(data_.begin(), data_.end(), out.data_.begin(), fn);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(const Tensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] *= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  Tensor& operator+=(T s) {
    for (auto& v : data_) v += s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator+(Tensor a, T s) { return a += s; }
  friend Tensor operator-(Tensor a, T s) { return a += -s; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }
  friend Tensor operator*(Tensor a, const Tensor& b) { return a *= b; }
  friend Tensor operator-(Tensor a) { return a *= T(-1); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void require_same_shape(const Tensor& o) const {
    if (o.shape_ != shape_)
      throw ShapeError("shape mismatch: " + morphnet::to_string(shape_) + " vs " +
                       morphnet::to_string(o.shape_));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b);
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](T v) { return std::isfinite(v); });
}

template <class T>
double sample_variance(std::span<const T> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (T x : v) mean += static_cast<double>(x);
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (T x : v) acc += (static_cast<double>(x) - mean) * (static_cast<double>(x) - mean);
  return acc / static_cast<double>(v.size() - 1);
}

// ---------------------------------------------------------------------------
// Rng

/// Deterministic generator: std::mt19937_64 engine. Uniforms take the top 53
/// bits of one draw; normals use Box-Muller with no cached second variate, so
/// the whole stream state is the engine state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = unit();
    while (u1 <= 0.0) u1 = unit();
    const double u2 = unit();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  double half_normal(double stddev = 1.0) { return std::abs(normal(0.0, stddev)); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return static_cast<std::size_t>(r % n);
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw std::invalid_argument("malformed rng state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Sliding windows

struct Padding {
  enum class Kind { none, zero, replicate };
  Kind kind = Kind::none;
  std::size_t amount = 0;

  static Padding none() { return {}; }
  static Padding zero(std::size_t k) { return {Kind::zero, k}; }
  static Padding replicate(std::size_t k) { return {Kind::replicate, k}; }

  std::size_t pad() const { return kind == Kind::none ? 0 : amount; }
};

struct Extent2 {
  std::size_t rows = 1;
  std::size_t cols = 1;
};

/// Maps (output position, window cell) to a source offset within one
/// C x H x W image. Offsets are precomputed once per geometry; -1 marks a
/// zero-padded cell.
class WindowGeometry {
 public:
  WindowGeometry(std::size_t channels, std::size_t height, std::size_t width,
                 Extent2 window, Extent2 stride, Padding padding)
      : channels_(channels), height_(height), width_(width), window_(window),
        stride_(stride), padding_(padding) {
    if (window.rows == 0 || window.cols == 0)
      throw ShapeError("window extents must be positive");
    if (stride.rows == 0 || stride.cols == 0)
      throw ShapeError("stride must be positive");
    const std::size_t p = padding.pad();
    const std::size_t ph = height + 2 * p;
    const std::size_t pw = width + 2 * p;
    if (window.rows > ph || window.cols > pw)
      throw ShapeError("window " + std::to_string(window.rows) + "x" +
                       std::to_string(window.cols) + " larger than padded input " +
                       std::to_string(ph) + "x" + std::to_string(pw));
    out_rows_ = (ph - window.rows) / stride.rows + 1;
    out_cols_ = (pw - window.cols) / stride.cols + 1;

    const std::size_t k = patch_size();
    table_.resize(out_rows_ * out_cols_ * k);
    const auto sp = static_cast<std::ptrdiff_t>(p);
    for (std::size_t oy = 0; oy < out_rows_; ++oy)
      for (std::size_t ox = 0; ox < out_cols_; ++ox) {
        std::ptrdiff_t* row = &table_[(oy * out_cols_ + ox) * k];
        std::size_t cell = 0;
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t a = 0; a < window.rows; ++a)
            for (std::size_t b = 0; b < window.cols; ++b, ++cell) {
              auto y = static_cast<std::ptrdiff_t>(oy * stride.rows + a) - sp;
              auto x = static_cast<std::ptrdiff_t>(ox * stride.cols + b) - sp;
              const auto h = static_cast<std::ptrdiff_t>(height);
              const auto w = static_cast<std::ptrdiff_t>(width);
              const bool inside = y >= 0 && y < h && x >= 0 && x < w;
              if (!inside && padding.kind == Padding::Kind::zero) {
                row[cell] = -1;
                continue;
              }
              y = std::clamp<std::ptrdiff_t>(y, 0, h - 1);
              x = std::clamp<std::ptrdiff_t>(x, 0, w - 1);
              row[cell] = static_cast<std::ptrdiff_t>(c) * h * w + y * w + x;
            }
      }
  }

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t out_rows() const { return out_rows_; }
  std::size_t out_cols() const { return out_cols_; }
  std::size_t positions() const { return out_rows_ * out_cols_; }
  std::size_t patch_size() const { return channels_ * window_.rows * window_.cols; }
  std::size_t image_size() const { return channels_ * height_ * width_; }
  Extent2 window() const { return window_; }
  Padding padding() const { return padding_; }

  const std::ptrdiff_t* cells(std::size_t position) const {
    return &table_[position * patch_size()];
  }

 private:
  std::size_t channels_, height_, width_;
  Extent2 window_, stride_;
  Padding padding_;
  std::size_t out_rows_ = 0, out_cols_ = 0;
  std::vector<std::ptrdiff_t> table_;
};

namespace detail {
inline Shape as_nchw(const Shape& s) {
  switch (s.size()) {
    case 2: return {1, 1, s[0], s[1]};
    case 3: return {1, s[0], s[1], s[2]};
    case 4: return s;
    default:
      throw ShapeError("window_view expects a 2-D, 3-D or 4-D tensor, got " + to_string(s));
  }
}
}  // namespace detail

/// Extracts every window as a contiguous patch. A 4-D N x C x H x W input
/// gives N x Ho x Wo x (C*kh*kw); 2-D and 3-D inputs drop the batch axis.
/// Patch cells are ordered (channel, row, col), matching filter layout.
template <class T>
Tensor<T> window_view(const Tensor<T>& t, Extent2 window, Extent2 stride = {1, 1},
                      Padding padding = Padding::none()) {
  const Shape s = detail::as_nchw(t.shape());
  const WindowGeometry g(s[1], s[2], s[3], window, stride, padding);
  const std::size_t n = s[0], k = g.patch_size(), pos = g.positions();
  std::vector<T> out(n * pos * k);
  for (std::size_t i = 0; i < n; ++i) {
    const T* img = t.data().data() + i * g.image_size();
    T* dst = out.data() + i * pos * k;
    for (std::size_t p = 0; p < pos; ++p) {
      const std::ptrdiff_t* cells = g.cells(p);
      for (std::size_t c = 0; c < k; ++c) dst[p * k + c] = cells[c] < 0 ? T{} : img[cells[c]];
    }
  }
  Shape out_shape;
  if (t.rank() == 4) out_shape = {n, g.out_rows(), g.out_cols(), k};
  else out_shape = {g.out_rows(), g.out_cols(), k};
  return Tensor<T>(std::move(out_shape), std::move(out));
}

/// Adjoint of window_view: accumulates patch gradients back onto the input.
template <class T>
Tensor<T> window_scatter(const Tensor<T>& patch_grad, const Shape& input_shape,
                         Extent2 window, Extent2 stride = {1, 1},
                         Padding padding = Padding::none()) {
  const Shape s = detail::as_nchw(input_shape);
  const WindowGeometry g(s[1], s[2], s[3], window, stride, padding);
  const std::size_t n = s[0], k = g.patch_size(), pos = g.positions();
  if (patch_grad.size() != n * pos * k)
    throw ShapeError("patch gradient does not match window geometry");
  Tensor<T> out(input_shape);
  for (std::size_t i = 0; i < n; ++i) {
    T* img = out.data().data() + i * g.image_size();
    const T* src = patch_grad.data().data() + i * pos * k;
    for (std::size_t p = 0; p < pos; ++p) {
      const std::ptrdiff_t* cells = g.cells(p);
      for (std::size_t c = 0; c < k; ++c)
        if (cells[c] >= 0) img[cells[c]] += src[p * k + c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceOp { min, max, sum, mean };

template <class T>
struct Reduction {
  Tensor<T> values;
  // Selected element per output for min/max (lowest index on ties); empty otherwise.
  std::vector<std::size_t> index;
};

template <class T>
Reduction<T> reduce(const Tensor<T>& t, std::size_t axis, ReduceOp op) {
  if (axis >= t.rank())
    throw ShapeError("reduce axis " + std::to_string(axis) + " invalid for " +
                     to_string(t.shape()));
  const std::size_t len = t.shape()[axis];
  if (len == 0) throw ShapeError("empty reduction axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.shape()[i];
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.shape()[i];

  Shape out_shape = t.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Reduction<T> r{Tensor<T>(out_shape), {}};
  const bool arg = op == ReduceOp::min || op == ReduceOp::max;
  if (arg) r.index.resize(outer * inner);

  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const T* base = t.data().data() + o * len * inner + i;
      T acc = base[0];
      std::size_t best = 0;
      for (std::size_t j = 1; j < len; ++j) {
        const T v = base[j * inner];
        switch (op) {
          case ReduceOp::min:
            if (v < acc) acc = v, best = j;
            break;
          case ReduceOp::max:
            if (v > acc) acc = v, best = j;
            break;
          default: acc += v;
        }
      }
      if (op == ReduceOp::mean) acc /= static_cast<T>(len);
      r.values[o * inner + i] = acc;
      if (arg) r.index[o * inner + i] = best;
    }
  return r;
}

}  // namespace morphnet
