#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "morphnet/datasets.hpp"

using namespace morphnet;
namespace fs = std::filesystem;

namespace {

std::string tmp(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "morphnet_datasets";
  fs::create_directories(dir);
  return (dir / name).string();
}

// Big-endian IDX bytes assembled by hand.
std::string be(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

std::string idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w, const std::string& pixels) {
  return be(0x00000803) + be(n) + be(h) + be(w) + pixels;
}

std::string idx_labels(const std::string& labels) {
  return be(0x00000801) + be(static_cast<std::uint32_t>(labels.size())) + labels;
}

LabeledSet random_set(Rng& rng, std::size_t n, std::size_t classes) {
  LabeledSet s{Tensor<float>({n, 1, 5, 4}), {}, default_class_names(classes)};
  for (auto& v : s.images.storage()) v = static_cast<float>(rng.below(256)) / 255.0f;
  for (std::size_t i = 0; i < n; ++i) s.labels.push_back(rng.below(classes));
  return s;
}

}  // namespace

TEST(SyntheticTest, NoiselessSamplesEqualBase) {
  SyntheticSpec spec;
  spec.noise_sigma = 0;
  spec.per_class = 5;
  Rng rng(81);
  const LabeledSet set = gen_synthetic(spec, rng);
  ASSERT_EQ(set.size(), 10u);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor<float> base = synthetic_base(spec, set.labels[i]);
    for (std::size_t p = 0; p < base.size(); ++p) ASSERT_EQ(set.images[i * base.size() + p], base[p]);
  }
}

TEST(SyntheticTest, BaseShapesAreCenteredBinaryDiskAndRing) {
  const SyntheticSpec spec;
  const Tensor<float> disk = synthetic_base(spec, 0), ring = synthetic_base(spec, 1);
  ASSERT_EQ(disk.shape(), (Shape{28, 28}));
  std::size_t disk_px = 0, ring_px = 0;
  for (std::size_t r = 0; r < 28; ++r)
    for (std::size_t c = 0; c < 28; ++c) {
      const double d = std::hypot(r + 0.5 - 14.0, c + 0.5 - 14.0);
      EXPECT_TRUE(disk(r, c) == 0.0f || disk(r, c) == 1.0f);
      EXPECT_EQ(disk(r, c), d <= 8 ? 1.0f : 0.0f);
      EXPECT_EQ(ring(r, c), d <= 8 && d > 4 ? 1.0f : 0.0f);
      // Mirror symmetry about the center.
      EXPECT_EQ(disk(r, c), disk(27 - r, c));
      EXPECT_EQ(ring(r, c), ring(r, 27 - c));
      disk_px += disk(r, c) != 0, ring_px += ring(r, c) != 0;
    }
  EXPECT_NEAR(static_cast<double>(disk_px), std::numbers::pi * 64, 12);
  EXPECT_NEAR(static_cast<double>(ring_px), std::numbers::pi * 48, 12);
}

TEST(SyntheticTest, CountsNoiseAverageAndDeterminism) {
  const SyntheticSpec spec;
  Rng a(82), b(82);
  const LabeledSet set = gen_synthetic(spec, a);
  EXPECT_EQ(set.size(), 400u);
  EXPECT_EQ(std::count(set.labels.begin(), set.labels.end(), 0u), 200);
  EXPECT_EQ(std::count(set.labels.begin(), set.labels.end(), 1u), 200);
  EXPECT_EQ(set.class_names, synthetic_class_names());
  EXPECT_EQ(gen_synthetic(spec, b).images, set.images);

  // Mean of the 200 noisy disks against the base disk.
  const Tensor<float> base = synthetic_base(spec, 0);
  double worst = 0, below0 = 0;
  for (std::size_t p = 0; p < base.size(); ++p) {
    double mean = 0;
    for (std::size_t i = 0; i < 200; ++i) {
      mean += set.images[i * base.size() + p];
      below0 += set.images[i * base.size() + p] < 0;
    }
    worst = std::max(worst, std::abs(mean / 200 - base[p]));
  }
  EXPECT_LT(worst, 0.01);
  EXPECT_GT(below0, 0) << "noise must not be clipped";
}

TEST(SyntheticTest, Errors) {
  SyntheticSpec spec;
  spec.ring_inner = 8;
  Rng rng(83);
  EXPECT_THROW(gen_synthetic(spec, rng), std::invalid_argument);
  spec = SyntheticSpec{};
  spec.disk_radius = 20;
  EXPECT_THROW(gen_synthetic(spec, rng), std::invalid_argument);
  spec = SyntheticSpec{};
  spec.noise_sigma = -1;
  EXPECT_THROW(gen_synthetic(spec, rng), std::invalid_argument);
}

TEST(IdxTest, HandBuiltFixtureDecodes) {
  std::string pixels;
  for (int i = 0; i < 2 * 3 * 2; ++i) pixels.push_back(static_cast<char>(i * 20));
  write_file(tmp("h-images"), idx_images(2, 3, 2, pixels));
  write_file(tmp("h-labels"), idx_labels(std::string("\x01\x00", 2)));
  const LabeledSet set = load_idx(tmp("h-images"), tmp("h-labels"));
  ASSERT_EQ(set.images.shape(), (Shape{2, 1, 3, 2}));
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_FLOAT_EQ(set.images[i], static_cast<float>(static_cast<unsigned char>(pixels[i])) / 255.0f);
  EXPECT_EQ(set.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(set.num_classes(), 2u);
}

TEST(IdxTest, DistinctErrors) {
  write_file(tmp("e-images"), idx_images(3, 2, 2, std::string(12, '\0')));
  write_file(tmp("e-labels2"), idx_labels(std::string(2, '\0')));
  EXPECT_THROW(load_idx(tmp("e-images"), tmp("e-labels2")), IdxCountMismatch);

  write_file(tmp("e-short"), idx_images(3, 2, 2, std::string(11, '\0')));
  EXPECT_THROW(load_idx_images(tmp("e-short")), IdxTruncatedError);
  write_file(tmp("e-header"), be(0x00000803) + be(1));
  EXPECT_THROW(load_idx_images(tmp("e-header")), IdxTruncatedError);

  write_file(tmp("e-magic"), be(0x00000802) + be(1) + be(1) + be(1) + "x");
  EXPECT_THROW(load_idx_images(tmp("e-magic")), IdxMagicError);
  EXPECT_THROW(load_idx_labels(tmp("e-images")), IdxMagicError);
  EXPECT_THROW(load_idx_images(tmp("missing")), IoError);
}

TEST(IdxTest, CountMismatchAtFullScale) {
  write_file(tmp("f-images"), idx_images(10000, 1, 1, std::string(10000, '\0')));
  write_file(tmp("f-labels"), idx_labels(std::string(9999, '\0')));
  EXPECT_THROW(load_idx(tmp("f-images"), tmp("f-labels")), IdxCountMismatch);
}

TEST(IdxTest, RoundTripPlainAndGzip) {
  Rng rng(84);
  const LabeledSet set = random_set(rng, 17, 4);
  for (bool f32 : {false, true})
    for (const char* ext : {"", ".gz"}) {
      const std::string im = tmp(std::string("rt-images") + (f32 ? "-f" : "-u") + ext);
      const std::string lb = tmp(std::string("rt-labels") + (f32 ? "-f" : "-u") + ext);
      write_idx(set, im, lb, f32);
      const LabeledSet back = load_idx(im, lb, set.class_names);
      EXPECT_EQ(back.images, set.images) << im;
      EXPECT_EQ(back.labels, set.labels);
    }
  // Float32 keeps values outside [0, 1] exactly.
  LabeledSet noisy = set;
  noisy.images[0] = -0.125f;
  noisy.images[1] = 1.5f;
  write_idx(noisy, tmp("n-images"), tmp("n-labels"), true);
  EXPECT_EQ(load_idx(tmp("n-images"), tmp("n-labels"), set.class_names).images, noisy.images);
}

TEST(IdxTest, SplitDirectoryWithClassNames) {
  Rng rng(85);
  const LabeledSet set = gen_synthetic(SyntheticSpec{28, 3, 0.03}, rng);
  const fs::path dir = fs::path(tmp("split"));
  fs::create_directories(dir);
  write_split(set, dir.string(), true, true);
  write_class_names(dir.string(), set.class_names);
  const LabeledSet back = load_split(dir.string(), true);
  EXPECT_EQ(back.images, set.images);
  EXPECT_EQ(back.class_names, synthetic_class_names());
  EXPECT_THROW(load_split(dir.string(), false), IoError);
}

TEST(SubsetTest, BalancedDeterministicAndIdempotent) {
  Rng rng(86);
  const LabeledSet set = random_set(rng, 300, 3);
  Rng r1(7), r2(7);
  const LabeledSet a = subset(set, 20, r1);
  EXPECT_EQ(a.size(), 60u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), c), 20);
  const LabeledSet b = subset(set, 20, r2);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  Rng r3(7);
  const LabeledSet again = subset(a, 20, r3);
  EXPECT_EQ(again.images, a.images);
  EXPECT_EQ(again.labels, a.labels);

  Rng r4(7);
  const LabeledSet empty = subset(set, 0, r4);
  EXPECT_EQ(empty.size(), 0u);
  EXPECT_EQ(empty.images.dim(0), 0u);
}

TEST(SubsetTest, ThousandPerClassOfTenClasses) {
  Rng rng(87);
  LabeledSet set{Tensor<float>({12000, 1, 2, 2}), {}, default_class_names(10)};
  for (std::size_t i = 0; i < 12000; ++i) set.labels.push_back(i % 10);
  const LabeledSet s = subset(set, 1000, rng);
  EXPECT_EQ(s.size(), 10000u);
}

TEST(LabeledSetTest, ValidateAndGather) {
  LabeledSet s{Tensor<float>({3, 1, 1, 2}, {1, 2, 3, 4, 5, 6}), {0, 1, 0}, {"a", "b"}};
  EXPECT_NO_THROW(s.validate());
  std::vector<std::size_t> labels;
  const Tensor<float> batch = s.gather({2, 0, 1}, 0, 2, &labels);
  EXPECT_EQ(batch, Tensor<float>({2, 1, 1, 2}, {5, 6, 1, 2}));
  EXPECT_EQ(labels, (std::vector<std::size_t>{0, 0}));
  s.labels[1] = 2;
  EXPECT_THROW(s.validate(), std::out_of_range);
  s.labels.pop_back();
  EXPECT_THROW(s.validate(), ShapeError);
}
