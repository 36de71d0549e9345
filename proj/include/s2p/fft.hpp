#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "s2p/error.hpp"

namespace s2p::fft {

/// Iterative radix-2 FFT plan for a fixed power-of-two length. Unnormalised
/// forward convention X[k] = sum_n x[n] exp(-2 pi i k n / N). Immutable after
/// construction, so one plan may be shared between threads.
class Radix2Plan {
 public:
  explicit Radix2Plan(std::size_t n) : n_(n) {
    if (n < 2 || !std::has_single_bit(n)) throw ParameterError("fft: length must be a power of two >= 2");
    const int bits = std::countr_zero(n);
    reversed_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
      reversed_[i] = r;
    }
    twiddles_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = {std::cos(a), std::sin(a)};
    }
  }

  std::size_t size() const noexcept { return n_; }

  std::vector<std::complex<double>> forward(std::span<const double> signal) const {
    if (signal.size() != n_) throw ParameterError("fft: signal length does not match plan");
    std::vector<std::complex<double>> a(n_);
    for (std::size_t i = 0; i < n_; ++i) a[reversed_[i]] = signal[i];
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2, stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          // Plain complex product; operator* on std::complex adds NaN recovery we do not need.
          const auto w = twiddles_[j * stride];
          const auto x = a[start + j + half];
          const std::complex<double> t(w.real() * x.real() - w.imag() * x.imag(),
                                       w.real() * x.imag() + w.imag() * x.real());
          const auto u = a[start + j];
          a[start + j] = u + t;
          a[start + j + half] = u - t;
        }
      }
    }
    return a;
  }

  /// |X[k]| for k = 0..N/2.
  std::vector<double> rfft_magnitude(std::span<const double> signal) const {
    const auto spectrum = forward(signal);
    std::vector<double> mag(n_ / 2 + 1);
    for (std::size_t k = 0; k <= n_ / 2; ++k) mag[k] = std::abs(spectrum[k]);
    return mag;
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> reversed_;
  std::vector<std::complex<double>> twiddles_;
};

inline std::vector<double> rfft_mag(std::span<const double> signal) {
  return Radix2Plan(signal.size()).rfft_magnitude(signal);
}

}  // namespace s2p::fft
