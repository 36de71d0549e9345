#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "s2p/data.hpp"
#include "s2p/spectral.hpp"

using namespace s2p;
using namespace s2p::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("s2p_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Generator, DeterministicAndClassMajor) {
  const auto a = gen_dataset(3, 7), b = gen_dataset(3, 7), c = gen_dataset(3, 8);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].label, static_cast<int>(i / 3));
  }
  EXPECT_NE(a[0].image, c[0].image);
  // Sample i of a class is independent of how many samples were drawn.
  EXPECT_EQ(gen_dataset(5, 7)[5].image, a[3].image);
}

TEST(Generator, ShapesAreCentredAndInRange) {
  for (const auto& item : gen_dataset(2, 1)) {
    double sum = 0, sx = 0, sy = 0;
    for (std::size_t y = 0; y < kImageSide; ++y)
      for (std::size_t x = 0; x < kImageSide; ++x) {
        const double v = item.image(y, x);
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        sum += v;
        sx += v * double(x);
        sy += v * double(y);
      }
    ASSERT_GT(sum, 0.0);
    // The connector notch moves its centroid; everything else is centred.
    const double tol = item.label == int(ShapeClass::Connector) ? 6.0 : 1.5;
    EXPECT_NEAR(sx / sum, 63.5, tol);
    EXPECT_NEAR(sy / sum, 63.5, tol);
    EXPECT_EQ(item.image(0, 0), 0.0);
  }
}

TEST(Generator, WasherIsNearlyRadial) {
  Rng rng(3);
  const auto img = gen_shape(ShapeClass::Washer, rng);
  const auto f = spectral::extract_features(img, spectral::build_polar_grid());
  double hi = 0;
  for (std::size_t k = 1; k < spectral::kHarmonics; ++k) hi += f[k] * f[k];
  EXPECT_LT(hi, 0.02 * f[0] * f[0]);
}

TEST(Pgm, RoundTripAt8Bit) {
  const auto dir = temp_dir("pgm");
  Image img(3, 5);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = double(i * 17 % 256) / 255.0;
  save_pgm(img, dir / "a.pgm");
  const auto back = load_pgm(dir / "a.pgm");
  EXPECT_EQ(back, img);
}

TEST(Pgm, ParsesCommentsAnd16Bit) {
  std::string buf = "P5\n# comment\n2 1\n65535\n";
  buf += std::string("\xFF\xFF\x00\x00", 4);
  const auto img = parse_pgm(buf);
  EXPECT_EQ(img.width(), 2u);
  EXPECT_DOUBLE_EQ(img(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(img(0, 1), 0.0);
}

TEST(Pgm, MalformedInputsThrowFormatError) {
  EXPECT_THROW(parse_pgm("P2\n1 1\n255\n0"), FormatError);
  EXPECT_THROW(parse_pgm("P5\n2 2\n255\n\x01"), FormatError);
  EXPECT_THROW(parse_pgm("P5\n0 2\n255\n"), FormatError);
  EXPECT_THROW(parse_pgm("P5\n1 1\n70000\n\x01"), FormatError);
  EXPECT_THROW(parse_pgm(""), FormatError);
  try {
    parse_pgm("P5\n2 2\n255\n\x01");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  EXPECT_THROW(load_pgm("/nonexistent/x.pgm"), IoError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto dir = temp_dir("ds");
  const auto ds = gen_dataset(12, 4);
  save_dataset(ds, dir);
  EXPECT_TRUE(fs::exists(dir / "unterlegscheibe" / "11.pgm"));
  std::vector<std::string> classes;
  const auto back = load_dataset(dir, &classes);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(classes.size(), kNumClasses);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].label, ds[i].label);
    // 8-bit quantisation.
    for (std::size_t p = 0; p < ds[i].image.size(); ++p)
      ASSERT_NEAR(back[i].image.pixels()[p], ds[i].image.pixels()[p], 0.5 / 255 + 1e-12);
  }
  EXPECT_THROW(load_dataset(dir / "missing"), IoError);
}

TEST(Splits, LowDataIsStratifiedDisjointAndSeeded) {
  const auto ds = gen_dataset(20, 1);
  const auto s = split_low_data(ds, 3, 5);
  EXPECT_EQ(s.train.size(), 12u);
  EXPECT_EQ(s.test.size(), 68u);
  std::map<int, int> per;
  for (const auto& it : s.train) per[it.label]++;
  for (auto [c, n] : per) EXPECT_EQ(n, 3) << c;
  std::set<std::size_t> all(s.train_indices.begin(), s.train_indices.end());
  for (auto i : s.test_indices) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), ds.size());
  const auto s2 = split_low_data(ds, 3, 5), s3 = split_low_data(ds, 3, 6);
  EXPECT_EQ(s.train_indices, s2.train_indices);
  EXPECT_NE(s.train_indices, s3.train_indices);
  EXPECT_THROW(split_low_data(ds, 20, 1), ParameterError);
}

TEST(Splits, StratifiedSeventyFiveTwentyFive) {
  const auto ds = gen_dataset(20, 1);
  const auto s = split_stratified(ds, 0.75, 9);
  EXPECT_EQ(s.train.size(), 60u);
  EXPECT_EQ(s.test.size(), 20u);
  std::map<int, int> per;
  for (const auto& it : s.test) per[it.label]++;
  for (auto [c, n] : per) EXPECT_EQ(n, 5);
  EXPECT_TRUE(std::is_sorted(s.test_indices.begin(), s.test_indices.end()));
}

TEST(Augment, IdentityConfigIsIdentity) {
  Rng rng(1), g(2);
  const auto img = gen_shape(ShapeClass::Cube, g);
  EXPECT_EQ(augment(img, AugmentConfig::identity(), rng), img);
}

TEST(Augment, OutputInRangeAndDeterministic) {
  Rng g(2);
  const auto img = gen_shape(ShapeClass::Nut, g);
  Rng a(5), b(5);
  const auto x = augment(img, full_data_augment(), a), y = augment(img, full_data_augment(), b);
  EXPECT_EQ(x, y);
  for (double v : x.pixels()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Augment, PresetsDifferOnlyInRotation) {
  const auto lo = low_data_augment(), hi = full_data_augment();
  EXPECT_FALSE(lo.rotation);
  EXPECT_TRUE(hi.rotation);
  Rng r(3);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_augment(lo, 128, r).angle, 0.0);
}

TEST(Augment, RotationAnglesAreUniform) {
  // One-sample Kolmogorov-Smirnov statistic against U[0, 2 pi).
  Rng r(4);
  std::vector<double> u;
  for (int i = 0; i < 20000; ++i) u.push_back(sample_augment(full_data_augment(), 128, r).angle / (2 * std::numbers::pi));
  std::sort(u.begin(), u.end());
  double d = 0;
  const double n = double(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) d = std::max({d, double(i + 1) / n - u[i], u[i] - double(i) / n});
  EXPECT_LT(d, 0.02);
}

TEST(Augment, ParameterRanges) {
  Rng r(6);
  const auto cfg = full_data_augment();
  for (int i = 0; i < 2000; ++i) {
    const auto p = sample_augment(cfg, 128, r);
    EXPECT_GE(p.scale, 0.88);
    EXPECT_LT(p.scale, 1.12);
    EXPECT_LE(std::abs(p.tx), 0.06 * 128);
    EXPECT_GE(p.brightness, 0.65);
    EXPECT_LE(p.brightness, 1.35);
    EXPECT_LE(p.noise_sigma, 0.04);
  }
}
