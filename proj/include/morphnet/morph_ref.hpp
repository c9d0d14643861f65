#pragma once

// Classical (forward-only) binary and grayscale morphology. Outputs are
// computed only where the structuring element fits inside the image, so an
// H x W image and a kh x kw SE give an (H-kh+1) x (W-kw+1) result whose
// (0,0) cell sits under the SE origin.

#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "morphnet/tensor.hpp"

namespace morphnet {

struct Origin {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Origin&, const Origin&) = default;
};

class MorphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Hit and miss SEs share a cell with value 1.
class IntersectingSE : public MorphError {
 public:
  IntersectingSE(std::string what, std::vector<Origin> cells)
      : MorphError(std::move(what)), cells_(std::move(cells)) {}
  const std::vector<Origin>& cells() const { return cells_; }

 private:
  std::vector<Origin> cells_;
};

using BinaryImage = Tensor<std::uint8_t>;

struct BinarySE {
  BinaryImage grid;  // 1 = member
  Origin origin;
};

struct BinarySEPair {
  BinaryImage hit;
  BinaryImage miss;
  Origin origin;

  std::vector<Origin> intersecting_cells() const {
    std::vector<Origin> out;
    for (std::size_t r = 0; r < hit.dim(0); ++r)
      for (std::size_t c = 0; c < hit.dim(1); ++c)
        if (hit(r, c) && miss(r, c)) out.push_back({r, c});
    return out;
  }

  void validate() const {
    if (hit.shape() != miss.shape() || hit.rank() != 2)
      throw MorphError("hit and miss SEs must be 2-D grids of equal extents");
    auto bad = intersecting_cells();
    if (!bad.empty()) {
      std::ostringstream os;
      os << "hit and miss SEs intersect at";
      for (auto& o : bad) os << " (" << o.row << "," << o.col << ")";
      throw IntersectingSE(os.str(), std::move(bad));
    }
  }
};

template <class T>
struct GraySE {
  Tensor<T> weights;
  std::vector<std::uint8_t> dnc;  // 1 = ignored; empty means no DNC cells
  Origin origin;

  std::size_t rows() const { return weights.dim(0); }
  std::size_t cols() const { return weights.dim(1); }
  bool is_dnc(std::size_t i) const { return !dnc.empty() && dnc[i]; }
};

namespace detail {

inline void require_grid(const Shape& s, const char* what) {
  if (s.size() != 2 || s[0] == 0 || s[1] == 0)
    throw ShapeError(std::string(what) + " must be a non-empty 2-D grid, got " + to_string(s));
}

inline void require_fits(const Shape& img, std::size_t kh, std::size_t kw) {
  if (kh > img[0] || kw > img[1])
    throw ShapeError("structuring element " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit image " + to_string(img));
}

// out(i,j) = agg over cells (a,b) of image(i+a, j+b) (+/-) w(a,b), restricted
// to cells where `use(a*kw+b)` holds.
template <class T, class Use, class Term, class Better>
Tensor<T> slide(const Tensor<T>& img, std::size_t kh, std::size_t kw, Use use, Term term,
                Better better, T init) {
  require_fits(img.shape(), kh, kw);
  const std::size_t oh = img.dim(0) - kh + 1, ow = img.dim(1) - kw + 1;
  Tensor<T> out({oh, ow});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      T acc = init;
      for (std::size_t a = 0; a < kh; ++a)
        for (std::size_t b = 0; b < kw; ++b) {
          const std::size_t cell = a * kw + b;
          if (!use(cell)) continue;
          const T v = term(img(i + a, j + b), cell);
          if (better(v, acc)) acc = v;
        }
      out(i, j) = acc;
    }
  return out;
}

}  // namespace detail

inline BinaryImage complement(const BinaryImage& a) {
  return a.map([](std::uint8_t v) -> std::uint8_t { return v ? 0 : 1; });
}

template <class T>
Tensor<T> reflect_grid(const Tensor<T>& g) {
  const std::size_t kh = g.dim(0), kw = g.dim(1);
  Tensor<T> out({kh, kw});
  for (std::size_t a = 0; a < kh; ++a)
    for (std::size_t b = 0; b < kw; ++b) out(kh - 1 - a, kw - 1 - b) = g(a, b);
  return out;
}

inline Origin reflect_origin(Origin o, std::size_t kh, std::size_t kw) {
  return {kh - 1 - o.row, kw - 1 - o.col};
}

inline BinarySE reflect(const BinarySE& se) {
  return {reflect_grid(se.grid), reflect_origin(se.origin, se.grid.dim(0), se.grid.dim(1))};
}

template <class T>
GraySE<T> reflect(const GraySE<T>& se) {
  GraySE<T> out{reflect_grid(se.weights), {}, reflect_origin(se.origin, se.rows(), se.cols())};
  if (!se.dnc.empty()) {
    out.dnc.resize(se.dnc.size());
    const std::size_t n = se.dnc.size();
    for (std::size_t i = 0; i < n; ++i) out.dnc[n - 1 - i] = se.dnc[i];
  }
  return out;
}

/// A eroded by B: 1 where every member of B, placed with its origin on the
/// cell, lands on a 1. An SE with no members erodes to all ones.
inline BinaryImage binary_erode(const BinaryImage& a, const BinarySE& se) {
  detail::require_grid(a.shape(), "image");
  detail::require_grid(se.grid.shape(), "structuring element");
  const std::size_t kh = se.grid.dim(0), kw = se.grid.dim(1);
  auto r = detail::slide<std::uint8_t>(
      a, kh, kw, [&](std::size_t c) { return se.grid[c] != 0; },
      [](std::uint8_t v, std::size_t) { return v; },
      [](std::uint8_t v, std::uint8_t acc) { return v < acc; }, std::uint8_t{1});
  return r;
}

/// A dilated by B: 1 where the reflected, translated SE overlaps A.
inline BinaryImage binary_dilate(const BinaryImage& a, const BinarySE& se) {
  detail::require_grid(a.shape(), "image");
  detail::require_grid(se.grid.shape(), "structuring element");
  const BinarySE r = reflect(se);
  const std::size_t kh = r.grid.dim(0), kw = r.grid.dim(1);
  return detail::slide<std::uint8_t>(
      a, kh, kw, [&](std::size_t c) { return r.grid[c] != 0; },
      [](std::uint8_t v, std::size_t) { return v; },
      [](std::uint8_t v, std::uint8_t acc) { return v > acc; }, std::uint8_t{0});
}

/// (A erode H) intersect (A^c erode M). Intersecting SE pairs are rejected
/// unless `force` is set, in which case the raw formula is evaluated.
inline BinaryImage binary_hit_or_miss(const BinaryImage& a, const BinarySEPair& sep,
                                      bool force = false) {
  if (!force) sep.validate();
  else if (sep.hit.shape() != sep.miss.shape())
    throw MorphError("hit and miss SEs must have equal extents");
  const BinaryImage hit = binary_erode(a, {sep.hit, sep.origin});
  const BinaryImage miss = binary_erode(complement(a), {sep.miss, sep.origin});
  BinaryImage out(hit.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = hit[i] && miss[i];
  return out;
}

/// min over non-DNC cells of f(x+a, y+b) - w(a,b).
template <class T>
Tensor<T> gray_erode(const Tensor<T>& f, const GraySE<T>& se) {
  detail::require_grid(f.shape(), "image");
  detail::require_grid(se.weights.shape(), "structuring element");
  std::size_t active = 0;
  for (std::size_t i = 0; i < se.weights.size(); ++i) active += !se.is_dnc(i);
  if (active == 0) throw MorphError("structuring element has only don't-care cells");
  return detail::slide<T>(
      f, se.rows(), se.cols(), [&](std::size_t c) { return !se.is_dnc(c); },
      [&](T v, std::size_t c) { return v - se.weights[c]; },
      [](T v, T acc) { return v < acc; }, std::numeric_limits<T>::infinity());
}

/// max over non-DNC cells of f(s-x, t-y) + w(x,y): dilation with the SE
/// reflected about its origin.
template <class T>
Tensor<T> gray_dilate(const Tensor<T>& f, const GraySE<T>& se) {
  detail::require_grid(f.shape(), "image");
  detail::require_grid(se.weights.shape(), "structuring element");
  const GraySE<T> r = reflect(se);
  std::size_t active = 0;
  for (std::size_t i = 0; i < r.weights.size(); ++i) active += !r.is_dnc(i);
  if (active == 0) throw MorphError("structuring element has only don't-care cells");
  return detail::slide<T>(
      f, r.rows(), r.cols(), [&](std::size_t c) { return !r.is_dnc(c); },
      [&](T v, std::size_t c) { return v + r.weights[c]; },
      [](T v, T acc) { return v > acc; }, -std::numeric_limits<T>::infinity());
}

/// (f erode h) - (f dilate m^r).
template <class T>
Tensor<T> gray_hit_or_miss(const Tensor<T>& f, const GraySE<T>& h, const GraySE<T>& m) {
  if (h.weights.shape() != m.weights.shape() || !(h.origin == m.origin))
    throw MorphError("hit and miss SEs must share extents and origin");
  return gray_erode(f, h) - gray_dilate(f, reflect(m));
}

/// Largest erosion weight that can never win the minimum for an image in
/// [lb_image, ub_image] when foreground weights are at least lb_foreground.
inline double dnc_bound(double lb_image, double ub_image, double lb_foreground) {
  if (!(ub_image > lb_image))
    throw MorphError("dnc_bound needs a non-degenerate image range (ub > lb)");
  return lb_image - ub_image + lb_foreground;
}

/// Renders a valid-region result inside an H x W frame of `*` cells, the way
/// the uncomputed border is drawn in textbook figures. `at` is the input
/// coordinate of result cell (0,0).
template <class T, class Fmt>
std::string render_bordered(const Tensor<T>& result, std::size_t height, std::size_t width,
                            Origin at, Fmt fmt) {
  std::ostringstream os;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      if (c) os << ' ';
      const bool inside = r >= at.row && c >= at.col && r - at.row < result.dim(0) &&
                          c - at.col < result.dim(1);
      if (inside) os << fmt(result(r - at.row, c - at.col));
      else os << '*';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace morphnet
