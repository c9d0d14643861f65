#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

#include "morphnet/tensor.hpp"

using namespace morphnet;

namespace {

Tensor<double> ramp(Shape s) {
  Tensor<double> t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i + 1);
  return t;
}

}  // namespace

TEST(TensorTest, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t(1, 2, 3) = 5.0f;
  EXPECT_EQ(t[23], 5.0f);
  EXPECT_EQ(to_string(t.shape()), "[2x3x4]");
  EXPECT_THROW(t(2, 0, 0), std::out_of_range);
  EXPECT_THROW(t(0, 0), std::out_of_range);
  EXPECT_THROW(t.dim(3), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
}

TEST(TensorTest, ElementwiseArithmeticChecksShapes) {
  Tensor<double> a({2}, {1, 2}), b({2}, {3, 5});
  EXPECT_EQ((a + b), Tensor<double>({2}, {4, 7}));
  EXPECT_EQ((a * b), Tensor<double>({2}, {3, 10}));
  EXPECT_EQ((b - a), Tensor<double>({2}, {2, 3}));
  EXPECT_THROW(a + Tensor<double>({3}), ShapeError);
}

TEST(WindowViewTest, FourByFourThreeByThreeGivesTwoByTwo) {
  const Tensor<double> x = ramp({4, 4});
  const Tensor<double> p = window_view(x, {3, 3});
  ASSERT_EQ(p.shape(), (Shape{2, 2, 9}));
  // Patch at (1,0): rows 1..3, cols 0..2 of the ramp.
  const std::vector<double> expect{5, 6, 7, 9, 10, 11, 13, 14, 15};
  for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(p(1, 0, c), expect[c]);
}

TEST(WindowViewTest, UnitWindowIsIdentity) {
  const Tensor<double> x = ramp({2, 3, 5, 4});
  const Tensor<double> p = window_view(x, {1, 1});
  ASSERT_EQ(p.shape(), (Shape{2, 5, 4, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(p(n, i, j, c), x(n, c, i, j));
}

TEST(WindowViewTest, ZeroPaddedRampMatchesEnumeration) {
  const Tensor<double> x = ramp({5, 5});
  const Tensor<double> p = window_view(x, {3, 3}, {1, 1}, Padding::zero(1));
  ASSERT_EQ(p.shape(), (Shape{5, 5, 9}));
  // Brute-force index enumeration.
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          const int r = i + a - 1, c = j + b - 1;
          const double v = (r < 0 || r >= 5 || c < 0 || c >= 5) ? 0.0 : static_cast<double>(r * 5 + c + 1);
          EXPECT_EQ(p(i, j, a * 3 + b), v) << i << "," << j << " cell " << a << "," << b;
        }
  // Corner patch of the hand table.
  const std::vector<double> corner{0, 0, 0, 0, 1, 2, 0, 6, 7};
  for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(p(0, 0, c), corner[c]);
}

TEST(WindowViewTest, ReplicatePaddingClampsToEdge) {
  const Tensor<double> x = ramp({3, 3});
  const Tensor<double> p = window_view(x, {3, 3}, {1, 1}, Padding::replicate(1));
  ASSERT_EQ(p.shape(), (Shape{3, 3, 9}));
  const std::vector<double> corner{1, 1, 2, 1, 1, 2, 4, 4, 5};
  for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(p(0, 0, c), corner[c]);
}

TEST(WindowViewTest, OversizedWindowIsShapeError) {
  EXPECT_THROW(window_view(ramp({2, 2}), {3, 3}), ShapeError);
  EXPECT_NO_THROW(window_view(ramp({2, 2}), {3, 3}, {1, 1}, Padding::zero(1)));
}

TEST(WindowViewTest, PatchSumsEqualDirectBoxFilter) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    const std::size_t kh = 1 + rng.below(h), kw = 1 + rng.below(w);
    const std::size_t sr = 1 + rng.below(2), sc = 1 + rng.below(2);
    Tensor<double> x({h, w});
    for (auto& v : x.data()) v = rng.normal();
    const Tensor<double> p = window_view(x, {kh, kw}, {sr, sc});
    const std::size_t oh = (h - kh) / sr + 1, ow = (w - kw) / sc + 1;
    ASSERT_EQ(p.shape(), (Shape{oh, ow, kh * kw}));
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double direct = 0, viewed = 0;
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) direct += x(i * sr + a, j * sc + b);
        for (std::size_t c = 0; c < kh * kw; ++c) viewed += p(i, j, c);
        EXPECT_NEAR(viewed, direct, 1e-12);
      }
  }
}

TEST(WindowViewTest, ScatterIsAdjointOfView) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const Shape s{1 + rng.below(2), 1 + rng.below(3), 3 + rng.below(4), 3 + rng.below(4)};
    const Extent2 win{1 + rng.below(3), 1 + rng.below(3)};
    const Padding pad = rng.below(2) ? Padding::zero(rng.below(2)) : Padding::none();
    Tensor<double> x(s);
    for (auto& v : x.data()) v = rng.normal();
    const Tensor<double> px = window_view(x, win, {1, 1}, pad);
    Tensor<double> g(px.shape());
    for (auto& v : g.data()) v = rng.normal();
    const Tensor<double> back = window_scatter(g, s, win, {1, 1}, pad);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < px.size(); ++i) lhs += px[i] * g[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-9 * (1 + std::abs(lhs)));
  }
}

TEST(ReduceTest, SmallExamples) {
  const auto mx = reduce(Tensor<double>({2}, {-0.7, 0.0}), 0, ReduceOp::max);
  EXPECT_EQ(mx.values[0], 0.0);
  EXPECT_EQ(mx.index[0], 1u);
  EXPECT_EQ(reduce(Tensor<double>({3}, {1, 2, 3}), 0, ReduceOp::sum).values[0], 6.0);
  EXPECT_EQ(reduce(Tensor<double>({3}, {1, 2, 3}), 0, ReduceOp::mean).values[0], 2.0);
  EXPECT_TRUE(reduce(Tensor<double>({3}, {1, 2, 3}), 0, ReduceOp::sum).index.empty());
}

TEST(ReduceTest, MinMatchesLinearScan) {
  Rng rng(5);
  Tensor<double> v({9});
  for (auto& x : v.data()) x = rng.uniform(-1, 1);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 9; ++i)
    if (v[i] < v[best]) best = i;
  const auto r = reduce(v, 0, ReduceOp::min);
  EXPECT_EQ(r.values[0], v[best]);
  EXPECT_EQ(r.index[0], best);
}

TEST(ReduceTest, TiesPickLowestIndexAndAxesWork) {
  const auto r = reduce(Tensor<double>({4}, {1, 3, 3, 0}), 0, ReduceOp::max);
  EXPECT_EQ(r.index[0], 1u);
  const Tensor<double> m({2, 3}, {1, 5, 2, 7, 0, 4});
  const auto cols = reduce(m, 0, ReduceOp::max);
  EXPECT_EQ(cols.values, Tensor<double>({3}, {7, 5, 4}));
  EXPECT_EQ(cols.index, (std::vector<std::size_t>{1, 0, 1}));
  const auto rows = reduce(m, 1, ReduceOp::min);
  EXPECT_EQ(rows.values, Tensor<double>({2}, {1, 0}));
}

TEST(ReduceTest, Errors) {
  EXPECT_THROW(reduce(Tensor<double>({0}), 0, ReduceOp::sum), ShapeError);
  EXPECT_THROW(reduce(Tensor<double>({3}), 1, ReduceOp::sum), ShapeError);
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const double x = a.normal(), y = b.normal();
    ASSERT_EQ(x, y);
    differs |= c.normal() != x;
  }
  EXPECT_TRUE(differs);
}

TEST(RngTest, StateRoundTrip) {
  Rng a(7);
  for (int i = 0; i < 10; ++i) a.unit();
  Rng b;
  b.set_state(a.state());
  EXPECT_TRUE(a == b);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.uniform(-1, 2), b.uniform(-1, 2));
  EXPECT_THROW(b.set_state("not a state"), std::invalid_argument);
}

TEST(RngTest, HalfNormalVariance) {
  Rng rng(11);
  std::vector<double> v(1000000);
  for (auto& x : v) x = rng.half_normal(1.0);
  const double expect = 1.0 - 2.0 / std::numbers::pi;
  EXPECT_NEAR(sample_variance<double>(v), expect, 0.02 * expect);
  EXPECT_TRUE(std::all_of(v.begin(), v.end(), [](double x) { return x >= 0; }));
}

TEST(RngTest, BelowAndShuffle) {
  Rng rng(1);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) ++counts[rng.below(5)];
  for (int c : counts) EXPECT_GT(c, 850);
  std::vector<int> p{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(p.begin(), p.end());
  std::vector<int> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_THROW(rng.below(0), std::invalid_argument);
}
