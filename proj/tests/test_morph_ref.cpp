#include <gtest/gtest.h>

#include <string>

#include "morphnet/image_io.hpp"
#include "morphnet/morph_ref.hpp"

using namespace morphnet;

namespace {

std::string fixture(const std::string& rel) { return std::string(MORPHNET_FIXTURES) + "/" + rel; }

using Grid = std::vector<std::vector<double>>;

template <class T>
void expect_grid(const Tensor<T>& t, const Grid& g, double tol = 1e-9) {
  ASSERT_EQ(t.shape(), (Shape{g.size(), g[0].size()}));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j)
      EXPECT_NEAR(static_cast<double>(t(i, j)), g[i][j], tol) << "cell " << i << "," << j;
}

Tensor<double> random_grid(Rng& rng, std::size_t h, std::size_t w) {
  Tensor<double> t({h, w});
  for (auto& v : t.storage()) v = rng.uniform(-1, 1);
  return t;
}

BinaryImage random_binary(Rng& rng, std::size_t h, std::size_t w) {
  BinaryImage t({h, w});
  for (auto& v : t.storage()) v = rng.below(2) ? 1 : 0;
  return t;
}

// Direct min/max over the window anchored at the output cell.
Tensor<double> oracle_erode(const Tensor<double>& f, const Tensor<double>& h, const std::vector<std::uint8_t>& dnc = {}) {
  const std::size_t kh = h.dim(0), kw = h.dim(1);
  Tensor<double> out({f.dim(0) - kh + 1, f.dim(1) - kw + 1});
  for (std::size_t i = 0; i < out.dim(0); ++i)
    for (std::size_t j = 0; j < out.dim(1); ++j) {
      double best = INFINITY;
      for (std::size_t a = 0; a < kh; ++a)
        for (std::size_t b = 0; b < kw; ++b)
          if (dnc.empty() || !dnc[a * kw + b]) best = std::min(best, f(i + a, j + b) - h(a, b));
      out(i, j) = best;
    }
  return out;
}

Tensor<double> oracle_dilate(const Tensor<double>& f, const Tensor<double>& s) {
  const std::size_t kh = s.dim(0), kw = s.dim(1);
  Tensor<double> out({f.dim(0) - kh + 1, f.dim(1) - kw + 1});
  for (std::size_t i = 0; i < out.dim(0); ++i)
    for (std::size_t j = 0; j < out.dim(1); ++j) {
      double best = -INFINITY;
      for (std::size_t a = 0; a < kh; ++a)
        for (std::size_t b = 0; b < kw; ++b)
          best = std::max(best, f(i + a, j + b) + s(kh - 1 - a, kw - 1 - b));
      out(i, j) = best;
    }
  return out;
}

}  // namespace

// --- binary -------------------------------------------------------------

TEST(BinaryMorphTest, CornerFigure) {
  const BinaryImage a = threshold(read_pgm(fixture("fig1/image.pgm")));
  const BinarySE h = to_binary_se(read_se(fixture("fig1/hit.se")));
  const BinarySE m = to_binary_se(read_se(fixture("fig1/miss.se")));
  EXPECT_EQ(h.origin, (Origin{1, 1}));
  expect_grid(binary_erode(a, h), {{0, 1}, {0, 0}});
  expect_grid(binary_dilate(a, reflect(m)), {{1, 0}, {1, 1}});
  expect_grid(binary_hit_or_miss(a, {h.grid, m.grid, h.origin}), {{0, 1}, {0, 0}});
}

TEST(BinaryMorphTest, IntersectingPairRejectedUnlessForced) {
  const BinaryImage a = threshold(read_pgm(fixture("fig1/image.pgm")));
  const BinarySE h = to_binary_se(read_se(fixture("fig1/hit.se")));
  const BinarySE mi = to_binary_se(read_se(fixture("fig1/miss-intersecting.se")));
  const BinarySEPair pair{h.grid, mi.grid, h.origin};
  try {
    binary_hit_or_miss(a, pair);
    FAIL() << "expected IntersectingSE";
  } catch (const IntersectingSE& e) {
    ASSERT_EQ(e.cells().size(), 1u);
    EXPECT_EQ(e.cells()[0], (Origin{1, 1}));
    EXPECT_NE(std::string(e.what()).find("(1,1)"), std::string::npos);
  }
  expect_grid(binary_hit_or_miss(a, pair, true), {{0, 0}, {0, 0}});
}

TEST(BinaryMorphTest, HitOrMissIsErosionMinusDilationOfReflectedMiss) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const BinaryImage a = random_binary(rng, 5 + rng.below(3), 5 + rng.below(3));
    BinaryImage h = random_binary(rng, 3, 3), m({3, 3});
    for (std::size_t i = 0; i < 9; ++i) m[i] = h[i] ? 0 : static_cast<std::uint8_t>(rng.below(2));
    const BinaryImage hm = binary_hit_or_miss(a, {h, m, {1, 1}});
    const BinaryImage er = binary_erode(a, {h, {1, 1}});
    const BinaryImage di = binary_dilate(a, reflect(BinarySE{m, {1, 1}}));
    for (std::size_t i = 0; i < hm.size(); ++i) ASSERT_EQ(hm[i], er[i] && !di[i]);
  }
}

TEST(BinaryMorphTest, DilationIsDualOfErosion) {
  Rng rng(22);
  for (int t = 0; t < 200; ++t) {
    const BinaryImage a = random_binary(rng, 6, 6);
    const BinarySE s{random_binary(rng, 1 + rng.below(3), 1 + rng.below(3)), {0, 0}};
    EXPECT_EQ(binary_dilate(a, s), complement(binary_erode(complement(a), reflect(s))));
  }
}

TEST(BinaryMorphTest, ShapeErrors) {
  const BinaryImage a({2, 2}, 1);
  EXPECT_THROW(binary_erode(a, {BinaryImage({3, 3}, 1), {1, 1}}), std::invalid_argument);
  EXPECT_THROW(binary_hit_or_miss(a, {BinaryImage({1, 1}), BinaryImage({1, 2}), {0, 0}}), MorphError);
}

// --- grayscale ----------------------------------------------------------

TEST(GrayMorphTest, FigureColumns) {
  struct Column {
    Grid erosion, dilation, hit_or_miss;
  };
  const std::vector<Column> expect{
      {{{-0.7, 0.0}, {-0.7, -0.7}}, {{1.4, 1.0}, {1.4, 1.4}}, {{-2.1, -1.0}, {-2.1, -2.1}}},
      {{{-0.7, 0.0}, {-0.7, -0.7}}, {{1.4, 1.0}, {1.4, 1.4}}, {{-2.1, -1.0}, {-2.1, -2.1}}},
      {{{-0.7, 0.0}, {-0.7, -0.7}}, {{1.7, 1.0}, {1.7, 1.7}}, {{-2.4, -1.0}, {-2.4, -2.4}}},
      {{{-0.7, 0.3}, {-0.7, -0.7}}, {{1.7, 0.7}, {1.7, 1.7}}, {{-2.4, -0.4}, {-2.4, -2.4}}},
      {{{-0.7, -0.1}, {-0.7, -0.7}}, {{1.7, 1.1}, {1.7, 1.7}}, {{-2.4, -1.2}, {-2.4, -2.4}}},
      {{{-0.7, -0.7}, {-0.7, -0.7}}, {{1.7, 1.1}, {1.7, 1.7}}, {{-2.4, -1.8}, {-2.4, -2.4}}},
  };
  for (std::size_t c = 0; c < expect.size(); ++c) {
    SCOPED_TRACE("column " + std::to_string(c + 1));
    const std::string dir = "fig2-col" + std::to_string(c + 1) + "/";
    const Tensor<double> f = read_pgm(fixture(dir + "image.pgm"));
    const GraySE<double> h = to_gray_se(read_se(fixture(dir + "hit.se")));
    const GraySE<double> m = to_gray_se(read_se(fixture(dir + "miss.se")));
    expect_grid(gray_erode(f, h), expect[c].erosion, 1e-6);
    expect_grid(gray_dilate(f, reflect(m)), expect[c].dilation, 1e-6);
    expect_grid(gray_hit_or_miss(f, h, m), expect[c].hit_or_miss, 1e-6);
  }
}

TEST(GrayMorphTest, ErosionMatchesDirectMinimum) {
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    const Tensor<double> f = random_grid(rng, 4 + rng.below(5), 4 + rng.below(5));
    const Tensor<double> h = random_grid(rng, 1 + rng.below(4), 1 + rng.below(4));
    std::vector<std::uint8_t> dnc(h.size());
    for (auto& d : dnc) d = rng.below(4) == 0;
    dnc[rng.below(dnc.size())] = 0;
    EXPECT_EQ(gray_erode(f, GraySE<double>{h, {}, {0, 0}}), oracle_erode(f, h));
    EXPECT_EQ(gray_erode(f, GraySE<double>{h, dnc, {0, 0}}), oracle_erode(f, h, dnc));
  }
}

TEST(GrayMorphTest, DilationMatchesDirectMaximumAndDuality) {
  Rng rng(32);
  for (int t = 0; t < 200; ++t) {
    const Tensor<double> f = random_grid(rng, 4 + rng.below(5), 4 + rng.below(5));
    const GraySE<double> s{random_grid(rng, 1 + rng.below(4), 1 + rng.below(4)), {}, {0, 0}};
    const Tensor<double> d = gray_dilate(f, s);
    EXPECT_EQ(d, oracle_dilate(f, s.weights));
    EXPECT_LT(max_abs_diff(d, -gray_erode(-f, reflect(s))), 1e-12);
  }
}

TEST(GrayMorphTest, TranslationAndOffset) {
  Rng rng(33);
  const Tensor<double> f = random_grid(rng, 7, 7);
  const GraySE<double> h{random_grid(rng, 3, 3), {}, {1, 1}}, m{random_grid(rng, 3, 3), {}, {1, 1}};
  const Tensor<double> base = gray_hit_or_miss(f, h, m);
  // Constant image shift leaves hit-or-miss unchanged.
  EXPECT_LT(max_abs_diff(gray_hit_or_miss(f + 0.37, h, m), base), 1e-12);
  // Erosion and dilation follow the shift.
  EXPECT_LT(max_abs_diff(gray_erode(f + 0.37, h), gray_erode(f, h) + 0.37), 1e-12);
  // Spatial crop commutes with the valid-region operator.
  Tensor<double> crop({6, 6});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) crop(i, j) = f(i + 1, j + 1);
  const Tensor<double> shifted = gray_hit_or_miss(crop, h, m);
  for (std::size_t i = 0; i < shifted.dim(0); ++i)
    for (std::size_t j = 0; j < shifted.dim(1); ++j) EXPECT_DOUBLE_EQ(shifted(i, j), base(i + 1, j + 1));
}

TEST(GrayMorphTest, AllDontCareIsAnError) {
  const Tensor<double> f({4, 4});
  const GraySE<double> s{Tensor<double>({2, 2}), {1, 1, 1, 1}, {0, 0}};
  EXPECT_THROW(gray_erode(f, s), MorphError);
  EXPECT_THROW(gray_dilate(f, s), MorphError);
  EXPECT_THROW(gray_erode(f, GraySE<double>{Tensor<double>({5, 5}), {}, {2, 2}}), std::invalid_argument);
}

TEST(DncBoundTest, ValueAndEquivalenceToMasking) {
  EXPECT_DOUBLE_EQ(dnc_bound(0.0, 1.0, 0.0), -1.0);
  EXPECT_DOUBLE_EQ(dnc_bound(-1.0, 1.0, 0.5), -1.5);
  EXPECT_THROW(dnc_bound(1.0, 1.0, 0.0), MorphError);
  EXPECT_THROW(dnc_bound(2.0, 1.0, 0.0), MorphError);

  Rng rng(34);
  for (int t = 0; t < 200; ++t) {
    Tensor<double> f({5, 5}), h({3, 3});
    for (auto& v : f.storage()) v = rng.uniform(0, 1);
    std::vector<std::uint8_t> dnc(9);
    for (std::size_t i = 0; i < 9; ++i) {
      dnc[i] = rng.below(3) == 0;
      h[i] = rng.uniform(0.2, 1.0);
    }
    dnc[4] = 0;
    const double bound = dnc_bound(0.0, 1.0, 0.2);
    Tensor<double> hb = h;
    for (std::size_t i = 0; i < 9; ++i)
      if (dnc[i]) hb[i] = bound - rng.uniform(0, 1);
    EXPECT_LT(max_abs_diff(gray_erode(f, GraySE<double>{h, dnc, {1, 1}}),
                           gray_erode(f, GraySE<double>{hb, {}, {1, 1}})),
              1e-12);
  }
}

TEST(RenderTest, BorderedFrame) {
  const Tensor<double> r({2, 2}, {1, 2, 3, 4});
  const std::string s = render_bordered(r, 4, 4, {1, 1}, [](double v) { return format_number(v); });
  EXPECT_EQ(s, "* * * *\n* 1 2 *\n* 3 4 *\n* * * *\n");
}

// --- SE text ------------------------------------------------------------

TEST(SETextTest, ParsesDontCareOriginAndComments) {
  const SEText se = parse_se("# comment\n0.5 . 1\n  @. 2 -3\r\n\n");
  EXPECT_EQ(se.weights.shape(), (Shape{2, 3}));
  EXPECT_EQ(se.origin, (Origin{1, 0}));
  EXPECT_EQ(se.dnc, (std::vector<std::uint8_t>{0, 1, 0, 1, 0, 0}));
  EXPECT_DOUBLE_EQ(se.weights(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(se.weights(1, 2), -3.0);
  EXPECT_EQ(parse_se("1 1 1\n1 1 1\n1 1 1\n").origin, (Origin{1, 1}));
}

TEST(SETextTest, Errors) {
  EXPECT_THROW(parse_se(""), FormatError);
  EXPECT_THROW(parse_se("# only a comment\n"), FormatError);
  EXPECT_THROW(parse_se("1 2\n3\n"), FormatError);
  EXPECT_THROW(parse_se("@1 @2\n"), FormatError);
  EXPECT_THROW(parse_se("1 x\n"), FormatError);
  EXPECT_THROW(parse_se("1 2abc\n"), FormatError);
  EXPECT_THROW(read_se(fixture("does-not-exist.se")), IoError);
  EXPECT_THROW(to_binary_se(parse_se("1 0.5\n")), FormatError);
}

TEST(PgmTest, RoundTripAndErrors) {
  const std::string dir = ::testing::TempDir();
  Tensor<double> img({3, 2}, {0, 0.2, 0.4, 0.6, 0.8, 1.0});
  for (bool ascii : {false, true})
    for (unsigned maxval : {10u, 255u, 1000u}) {
      const std::string p = dir + "/rt.pgm";
      write_pgm(p, img, maxval, ascii);
      EXPECT_LT(max_abs_diff(read_pgm(p), img), 0.5 / maxval + 1e-12);
    }
  const std::string bad = dir + "/bad.pgm";
  write_file(bad, "P3\n1 1\n1\n0\n");
  EXPECT_THROW(read_pgm(bad), FormatError);
  write_file(bad, "P2\n2 2\n1\n0 1 2 0\n");
  EXPECT_THROW(read_pgm(bad), FormatError);
  write_file(bad, "P5\n4 4\n255\nab");
  EXPECT_THROW(read_pgm(bad), FormatError);
  EXPECT_THROW(read_pgm(dir + "/missing.pgm"), IoError);
}
