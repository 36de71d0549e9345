#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "s2p/data.hpp"
#include "s2p/fft.hpp"
#include "s2p/spectral.hpp"

using namespace s2p;
using namespace s2p::spectral;

namespace {

std::vector<double> naive_dft_mag(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> s = 0;
    for (std::size_t t = 0; t < n; ++t) {
      s += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t % n) / double(n));
    }
    out[k] = std::abs(s);
  }
  return out;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace

TEST(Fft, MatchesNaiveDft) {
  Rng rng(10);
  for (std::size_t n : {2u, 4u, 8u, 64u, 128u}) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto got = fft::rfft_mag(x), want = naive_dft_mag(x);
    ASSERT_EQ(got.size(), n / 2 + 1);
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-9 * (1 + want[k]));
  }
}

TEST(Fft, RejectsNonPowerOfTwo) {
  EXPECT_THROW(fft::Radix2Plan(12), ParameterError);
  EXPECT_THROW(fft::Radix2Plan(1), ParameterError);
  fft::Radix2Plan p(8);
  std::vector<double> x(4);
  EXPECT_THROW(p.forward(x), ParameterError);
}

TEST(Fft, KnownTransforms) {
  std::vector<double> ones(16, 1.0);
  const auto m = fft::rfft_mag(ones);
  EXPECT_NEAR(m[0], 16.0, 1e-12);
  for (std::size_t k = 1; k < m.size(); ++k) EXPECT_NEAR(m[k], 0.0, 1e-12);
  std::vector<double> cosine(32);
  for (std::size_t t = 0; t < 32; ++t) cosine[t] = std::cos(2 * std::numbers::pi * 3 * t / 32.0);
  const auto c = fft::rfft_mag(cosine);
  EXPECT_NEAR(c[3], 16.0, 1e-12);
  EXPECT_NEAR(c[2], 0.0, 1e-12);
}

TEST(PolarGrid, Geometry) {
  const auto g = build_polar_grid();
  EXPECT_EQ(g.side(), 128u);
  ASSERT_EQ(g.radii().size(), kRadii);
  ASSERT_EQ(g.thetas().size(), kAngles);
  EXPECT_DOUBLE_EQ(g.radii()[0], 0.5 / 64 * 64);
  EXPECT_DOUBLE_EQ(g.radii()[63], 63.5);
  EXPECT_DOUBLE_EQ(g.thetas()[32], std::numbers::pi / 2);
  EXPECT_EQ(PolarGrid::trainable_parameter_count(), 0u);
  EXPECT_THROW(PolarGrid(127, 64, 128), ParameterError);
}

TEST(Polar, ConstantImageGivesConstantMapInsideDisk) {
  const auto g = build_polar_grid();
  const auto pm = polar_transform(imaging::Image(128, 128, 0.7), g);
  ASSERT_EQ(pm.rows, kRadii);
  ASSERT_EQ(pm.cols, kAngles);
  for (std::size_t i = 0; i < kRadii; ++i)
    for (std::size_t j = 0; j < kAngles; ++j) EXPECT_NEAR(pm(i, j), 0.7, 1e-12);
  EXPECT_THROW(polar_transform(imaging::Image(64, 64), g), ParameterError);
}

TEST(Polar, QuarterTurnShiftsColumns) {
  Rng rng(11);
  imaging::Image img(128, 128);
  for (auto& v : img.pixels()) v = rng.uniform();
  const auto g = build_polar_grid();
  const auto a = polar_transform(img, g);
  const auto b = polar_transform(imaging::rotate_quarter_turns(img, 1), g);
  // A quarter turn is a shift of Theta/4 columns.
  const auto shifted = shift_columns(a, static_cast<std::ptrdiff_t>(kAngles / 4));
  const auto back = shift_columns(a, -static_cast<std::ptrdiff_t>(kAngles / 4));
  double best = 1e300;
  for (const auto* cand : {&shifted, &back}) {
    double worst = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) worst = std::max(worst, std::abs(cand->values[i] - b.values[i]));
    best = std::min(best, worst);
  }
  EXPECT_LT(best, 1e-9);
}

TEST(Signature, ShiftInvariantAndMatchesRowwiseDft) {
  Rng rng(12);
  Matrix pm(4, 16);
  for (auto& v : pm.values) v = rng.normal();
  const auto s = harmonic_signature(pm, 8);
  ASSERT_EQ(s.rows, 4u);
  ASSERT_EQ(s.cols, 8u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto row = pm.row(i);
    const auto want = naive_dft_mag(std::vector<double>(row.begin(), row.end()));
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(s(i, k), want[k], 1e-9 * (1 + want[k]));
  }
  for (std::ptrdiff_t m : {-5, 1, 3, 16, 31}) {
    const auto s2 = harmonic_signature(shift_columns(pm, m), 8);
    for (std::size_t i = 0; i < s.values.size(); ++i) EXPECT_LT(rel(s.values[i], s2.values[i]), 1e-9);
  }
  EXPECT_THROW(harmonic_signature(pm, 10), ParameterError);
}

TEST(Pool, MeanThenMax) {
  Matrix s(2, 3);
  s.values = {1, 5, 2, 3, 1, 8};
  const auto f = spectral_pool(s);
  EXPECT_EQ(f, (FeatureVector{2, 3, 5, 3, 5, 8}));
}

TEST(Features, RadiallySymmetricBlobHasOnlyDc) {
  imaging::Image img(128, 128);
  for (std::size_t y = 0; y < 128; ++y) {
    for (std::size_t x = 0; x < 128; ++x) {
      const double dx = x - 63.5, dy = y - 63.5;
      img(y, x) = std::exp(-(dx * dx + dy * dy) / (2 * 20.0 * 20.0));
    }
  }
  const auto f = extract_features(img, build_polar_grid());
  ASSERT_EQ(f.size(), kFeatureDim);
  for (std::size_t k = 1; k < kHarmonics; ++k) EXPECT_LT(f[k], 1e-3 * f[0]) << "k=" << k;
}

TEST(Features, LatticeRotationInvariant) {
  Rng rng(13);
  const auto g = build_polar_grid();
  const auto img = data::gen_shape(data::ShapeClass::Connector, rng);
  const auto f0 = extract_features(img, g);
  for (int k = 1; k < 4; ++k) {
    const auto fk = extract_features(imaging::rotate_quarter_turns(img, k), g);
    for (std::size_t i = 0; i < f0.size(); ++i) EXPECT_LT(rel(f0[i], fk[i]), 1e-5);
  }
}
