#pragma once

// Parameter-free rotation-invariant front end: polar resampling about the
// image centre, magnitude of the real FFT along the angle axis, then mean and
// max pooling over radius.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "s2p/error.hpp"
#include "s2p/fft.hpp"
#include "s2p/imaging.hpp"

namespace s2p::spectral {

inline constexpr std::size_t kRadii = 64;
inline constexpr std::size_t kAngles = 128;
inline constexpr std::size_t kHarmonics = 32;
inline constexpr std::size_t kFeatureDim = 2 * kHarmonics;

/// Dense row-major rows x cols array of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// R x Theta resampled intensities.
using PolarMap = Matrix;
/// R x K angular magnitude spectrum.
using SpectralSignature = Matrix;
/// [mean_0..mean_{K-1}, max_0..max_{K-1}].
using FeatureVector = std::vector<double>;

/// Sampling positions of the polar transform. r_i = (i + 0.5)/R * H/2,
/// theta_j = 2 pi j / Theta, centred at ((H-1)/2, (H-1)/2).
class PolarGrid {
 public:
  PolarGrid(std::size_t side, std::size_t radii, std::size_t angles)
      : side_(side), radii_count_(radii), angles_count_(angles) {
    if (side < 2 || side % 2 != 0) throw ParameterError("PolarGrid: side must be even and >= 2");
    if (radii < 2 || angles < 2) throw ParameterError("PolarGrid: need at least 2 radii and 2 angles");
    const double c = (static_cast<double>(side) - 1.0) / 2.0;
    const double half = static_cast<double>(side) / 2.0;
    radii_.resize(radii);
    thetas_.resize(angles);
    for (std::size_t i = 0; i < radii; ++i) {
      radii_[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(radii) * half;
    }
    for (std::size_t j = 0; j < angles; ++j) {
      thetas_[j] = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(angles);
    }
    coords_.reserve(radii * angles);
    for (std::size_t i = 0; i < radii; ++i) {
      for (std::size_t j = 0; j < angles; ++j) {
        coords_.push_back({c + radii_[i] * std::cos(thetas_[j]), c + radii_[i] * std::sin(thetas_[j])});
      }
    }
    if (std::has_single_bit(angles)) plan_.emplace(angles);
  }

  std::size_t side() const noexcept { return side_; }
  std::size_t radii_count() const noexcept { return radii_count_; }
  std::size_t angles_count() const noexcept { return angles_count_; }
  std::span<const double> radii() const noexcept { return radii_; }
  std::span<const double> thetas() const noexcept { return thetas_; }
  const imaging::Point& coord(std::size_t i, std::size_t j) const { return coords_[i * angles_count_ + j]; }
  std::span<const imaging::Point> coords() const noexcept { return coords_; }
  /// FFT plan along the angle axis; absent when Theta is not a power of two.
  const std::optional<fft::Radix2Plan>& plan() const noexcept { return plan_; }

  /// The front end holds no trainable tensors.
  static constexpr std::size_t trainable_parameter_count() noexcept { return 0; }

 private:
  std::size_t side_, radii_count_, angles_count_;
  std::vector<double> radii_, thetas_;
  std::vector<imaging::Point> coords_;
  std::optional<fft::Radix2Plan> plan_;
};

inline PolarGrid build_polar_grid(std::size_t side = imaging::kPreprocessSide, std::size_t radii = kRadii,
                                  std::size_t angles = kAngles) {
  return PolarGrid(side, radii, angles);
}

inline PolarMap polar_transform(const imaging::Image& img, const PolarGrid& grid) {
  if (img.height() != grid.side() || img.width() != grid.side()) {
    throw ParameterError("polar_transform: image side does not match grid");
  }
  PolarMap pm(grid.radii_count(), grid.angles_count());
  const auto coords = grid.coords();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    pm.values[i] = imaging::bilinear_sample(img, coords[i].x, coords[i].y);
  }
  return pm;
}

/// Cyclic shift of every row by m columns: out(i, j) = pm(i, j - m mod Theta).
inline PolarMap shift_columns(const PolarMap& pm, std::ptrdiff_t m) {
  PolarMap out(pm.rows, pm.cols);
  const auto n = static_cast<std::ptrdiff_t>(pm.cols);
  for (std::size_t i = 0; i < pm.rows; ++i) {
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      out(i, static_cast<std::size_t>(j)) = pm(i, static_cast<std::size_t>(((j - m) % n + n) % n));
    }
  }
  return out;
}

inline SpectralSignature harmonic_signature(const PolarMap& pm, const fft::Radix2Plan& plan,
                                            std::size_t harmonics = kHarmonics) {
  if (plan.size() != pm.cols) throw ParameterError("harmonic_signature: plan length != angle count");
  if (harmonics == 0 || harmonics > pm.cols / 2 + 1) {
    throw ParameterError("harmonic_signature: harmonic count out of range");
  }
  SpectralSignature sig(pm.rows, harmonics);
  for (std::size_t i = 0; i < pm.rows; ++i) {
    const auto mag = plan.rfft_magnitude(pm.row(i));
    std::copy_n(mag.begin(), harmonics, sig.row(i).begin());
  }
  return sig;
}

inline SpectralSignature harmonic_signature(const PolarMap& pm, std::size_t harmonics = kHarmonics) {
  return harmonic_signature(pm, fft::Radix2Plan(pm.cols), harmonics);
}

inline FeatureVector spectral_pool(const SpectralSignature& sig) {
  FeatureVector f(2 * sig.cols, 0.0);
  for (std::size_t k = 0; k < sig.cols; ++k) {
    double sum = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < sig.rows; ++i) {
      sum += sig(i, k);
      mx = std::max(mx, sig(i, k));
    }
    f[k] = sum / static_cast<double>(sig.rows);
    f[sig.cols + k] = mx;
  }
  return f;
}

inline FeatureVector extract_features(const imaging::Image& img, const PolarGrid& grid,
                                      std::size_t harmonics = kHarmonics) {
  const auto pm = polar_transform(img, grid);
  if (!grid.plan()) throw ParameterError("extract_features: angle count must be a power of two");
  return spectral_pool(harmonic_signature(pm, *grid.plan(), harmonics));
}

}  // namespace s2p::spectral
