#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "morphnet/init.hpp"

using namespace morphnet;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double variance_of(const Tensor<double>& t) { return sample_variance<double>(t.data()); }

}  // namespace

TEST(VarianceModelTest, DefaultsAndMeanLaw) {
  const VarianceModel m = VarianceModel::defaults();
  EXPECT_EQ(m.entry(0).a, 1.0);
  EXPECT_EQ(m.entry(0).b, 1.0);
  EXPECT_EQ(m.entry(1.0).a, 1.44);
  EXPECT_EQ(m.entry(-1.0).b, 0.74);
  EXPECT_EQ(m.entry(kInf).a, 0.60);
  for (double n : {1.0, 9.0, 25.0, 576.0}) {
    EXPECT_DOUBLE_EQ(m.ratio(0, n), 1.0 / n);
    for (auto& [alpha, e] : m.entries()) {
      const double r = m.ratio(alpha, n);
      EXPECT_GT(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
  }
  EXPECT_THROW(m.ratio(1.0, 0.5), std::invalid_argument);
}

TEST(VarianceModelTest, InterpolatesBetweenEntries) {
  const VarianceModel m = VarianceModel::defaults();
  const double r = m.ratio(1.5, 25.0);
  const double lo = m.ratio(1.0, 25.0), hi = m.ratio(2.0, 25.0);
  EXPECT_GE(r, std::min(lo, hi));
  EXPECT_LE(r, std::max(lo, hi));
  EXPECT_NEAR(m.ratio(1e9, 25.0), m.ratio(kInf, 25.0), 1e-6);
}

TEST(VarianceModelTest, TextRoundTripAndErrors) {
  const VarianceModel m = VarianceModel::defaults();
  const VarianceModel back = VarianceModel::from_text(m.to_text());
  EXPECT_EQ(back.entries().size(), m.entries().size());
  for (auto& [alpha, e] : m.entries()) {
    EXPECT_EQ(back.entry(alpha).a, e.a);
    EXPECT_EQ(back.entry(alpha).b, e.b);
  }
  EXPECT_EQ(back.provenance(), "fitted");
  EXPECT_THROW(VarianceModel::from_text("1.0 2.0\n"), std::invalid_argument);
  EXPECT_THROW(VarianceModel::from_text("0 2.0 1.0\n"), std::invalid_argument);
  EXPECT_THROW(VarianceModel::from_text("1 -2.0 1.0\n"), std::invalid_argument);
  EXPECT_NO_THROW(VarianceModel::from_text("# comment\n\n0 1.01 0.99\n"));
}

TEST(PowerLawFitTest, RecoversExactCoefficients) {
  std::vector<double> n, r;
  for (std::size_t k : default_fit_sizes()) {
    n.push_back(static_cast<double>(k));
    r.push_back(1.44 / std::pow(static_cast<double>(k), 0.74));
  }
  for (bool linear : {false, true}) {
    const auto [a, b] = fit_power_law(n, r, linear);
    EXPECT_NEAR(a, 1.44, 1e-9);
    EXPECT_NEAR(b, 0.74, 1e-9);
  }
  EXPECT_THROW(fit_power_law({9, 9, 9}, {0.1, 0.2, 0.3}), std::domain_error);
  EXPECT_THROW(fit_power_law({9}, {0.1}), std::invalid_argument);
  EXPECT_THROW(fit_power_law({9, 16}, {0.1, -0.2}), std::invalid_argument);
}

TEST(VarianceFitTest, MeanLawAtZeroAlpha) {
  Rng rng(71);
  const VarianceFit f = fit_variance_model(0.0, default_fit_sizes(), 20000, rng);
  EXPECT_NEAR(f.a, 1.0, 0.03);
  EXPECT_NEAR(f.b, 1.0, 0.03);
  for (std::size_t i = 0; i < f.n.size(); ++i) EXPECT_NEAR(f.ratio[i] * f.n[i], 1.0, 0.05);
}

TEST(VarianceFitTest, HardExtremumNearTable) {
  Rng rng(72);
  const VarianceFit f = fit_variance_model(kInf, default_fit_sizes(), 20000, rng);
  EXPECT_NEAR(f.a, 0.60, 0.15 * 0.60);
  EXPECT_NEAR(f.b, 0.24, 0.15 * 0.24);
}

TEST(VarianceFitTest, MonotoneInSizeAndAlpha) {
  const std::vector<std::size_t> sizes{9, 36, 81, 144};
  std::vector<std::vector<double>> by_alpha;
  for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
    Rng rng(73);
    by_alpha.push_back(fit_variance_model(alpha, sizes, 20000, rng).ratio);
    const auto& r = by_alpha.back();
    for (std::size_t i = 1; i < r.size(); ++i) EXPECT_LT(r[i], r[i - 1]) << "alpha " << alpha;
  }
  for (std::size_t a = 1; a < by_alpha.size(); ++a)
    for (std::size_t i = 0; i < sizes.size(); ++i) EXPECT_GE(by_alpha[a][i], by_alpha[a - 1][i] * 0.97);
}

TEST(VarianceFitTest, SignOfAlphaDoesNotMatter) {
  Rng r1(74), r2(74);
  const VarianceFit p = fit_variance_model(1.0, {9, 81}, 20000, r1);
  const VarianceFit n = fit_variance_model(-1.0, {9, 81}, 20000, r2);
  // Same draws: s_{-a}(x) = -s_a(-x), and -x is an equally likely sample.
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(n.ratio[i], p.ratio[i], 0.05 * p.ratio[i]);
}

TEST(VarianceFitTest, RejectsTooFewTrials) {
  Rng rng(75);
  EXPECT_THROW(fit_variance_model(1.0, {9}, 9999, rng), std::invalid_argument);
}

TEST(InitVarianceTest, GeneralizedConvolution) {
  const VarianceModel m = VarianceModel::defaults();
  EXPECT_DOUBLE_EQ(gc_init_variance(9, 0.0, m), 1.0 / 9.0);
  EXPECT_DOUBLE_EQ(gc_init_variance(1, 0.0, m), 1.0);
  EXPECT_DOUBLE_EQ(gc_init_variance(9, 1.0, m), 1.0 / (81.0 * 1.44 / std::pow(9.0, 0.74)));
  EXPECT_THROW(gc_init_variance(0.5, 1.0, m), std::invalid_argument);
}

TEST(InitVarianceTest, SoftHitMiss) {
  const VarianceModel m = VarianceModel::defaults();
  const double r = 0.60 / std::pow(9.0, 0.24);
  EXPECT_DOUBLE_EQ(shm_init_variance(1.0, kInf, 9, m), (1.0 / r - 1.0) / (1.0 - 2.0 / std::numbers::pi));
  EXPECT_DOUBLE_EQ(shm_init_variance(2.0, kInf, 9, m), 2.0 * shm_init_variance(1.0, kInf, 9, m));
  EXPECT_THROW(shm_init_variance(1.0, 0.0, 1, m), std::domain_error);
  EXPECT_THROW(shm_init_variance(0.0, kInf, 9, m), std::invalid_argument);

  VarianceModel near_one;
  near_one.set(5.0, 0.9999, 0.0);
  EXPECT_LT(shm_init_variance(1.0, 5.0, 9, near_one), 1e-3);
}

TEST(InitSpecTest, ParseAndPrint) {
  for (const char* s : {"const:0.01", "uniform:-0.01:0.01", "normal:1", "halfnormal:1", "kaiming", "shm:inf:1",
                        "shm:0.5:2", "gc:1"}) {
    const InitSpec spec = InitSpec::parse(s);
    EXPECT_EQ(InitSpec::parse(spec.to_string()), spec) << s;
  }
  EXPECT_EQ(InitSpec::parse("const:-0.01"), InitSpec::constant(-0.01));
  EXPECT_EQ(InitSpec::parse("shm:inf"), InitSpec::shm_scaled(kInf, 1.0));
  EXPECT_THROW(InitSpec::parse("xavier"), std::invalid_argument);
  EXPECT_THROW(InitSpec::parse("normal:abc"), std::invalid_argument);
  EXPECT_THROW(InitSpec::parse("normal:1x"), std::invalid_argument);
}

TEST(InitializeTest, ConstantAndHalfNormalSupport) {
  Rng rng(76);
  const Tensor<double> c = initialize<double>(InitSpec::constant(0.01), {4, 1, 3, 3}, rng);
  for (double v : c.data()) EXPECT_EQ(v, 0.01);
  const Tensor<double> hn = initialize<double>(InitSpec::half_normal(1.0), {1000}, rng);
  for (double v : hn.data()) EXPECT_GE(v, 0.0);
  EXPECT_THROW(initialize<double>(InitSpec::uniform(1, 1), {2}, rng), std::invalid_argument);
}

TEST(InitializeTest, KaimingVariance) {
  Rng rng(77);
  const Shape s{400, 32, 3, 3};
  EXPECT_EQ(fan_in(s), 288u);
  const Tensor<double> w = initialize<double>(InitSpec::kaiming(), s, rng);
  EXPECT_NEAR(variance_of(w), 2.0 / 288.0, 0.05 * 2.0 / 288.0);
}

TEST(InitializeTest, EverySpecHitsItsVariance) {
  const VarianceModel m = VarianceModel::defaults();
  const Shape s{12500, 8, 3, 3};  // 10^6 draws, fan-in 72
  const std::vector<InitSpec> specs{InitSpec::uniform(-0.01, 0.01), InitSpec::normal(1.0),
                                    InitSpec::half_normal(1.0),     InitSpec::kaiming(),
                                    InitSpec::gc_scaled(0.0),     InitSpec::gc_scaled(1.0),
                                    InitSpec::shm_scaled(1.0),    InitSpec::shm_scaled(kInf, 0.5)};
  Rng rng(78);
  for (const InitSpec& spec : specs) {
    const Tensor<double> w = initialize<double>(spec, s, rng, m);
    ASSERT_TRUE(all_finite(w));
    double target = init_scale_variance(spec, s, m);
    if (spec.kind == InitSpec::Kind::half_normal || spec.kind == InitSpec::Kind::shm_scaled)
      target *= half_normal_variance_ratio;
    EXPECT_NEAR(variance_of(w), target, 0.05 * target) << spec.to_string();
  }
}

TEST(InitializeTest, FanIn) {
  EXPECT_EQ(fan_in({10, 20}), 20u);
  EXPECT_EQ(fan_in({7}), 7u);
  EXPECT_EQ(fan_in({}), 1u);
}
