#pragma once

// Raster primitives and the foreground-extraction pipeline that turns a raw
// frame into a centred 128x128 grayscale crop.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "s2p/error.hpp"

namespace s2p::imaging {

inline constexpr std::size_t kPreprocessSide = 128;
inline constexpr int kPreprocessDilations = 2;

/// Row-major grayscale raster with values in [0, 1].
class Image {
 public:
  Image() = default;

  Image(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), pixels_(height * width, fill) {
    if (height == 0 || width == 0) throw ShapeError("Image: height and width must be >= 1");
  }

  Image(std::size_t height, std::size_t width, std::vector<double> pixels)
      : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (height == 0 || width == 0) throw ShapeError("Image: height and width must be >= 1");
    if (pixels_.size() != height * width) throw ShapeError("Image: pixel count != height*width");
    for (double v : pixels_) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw ParameterError("Image: pixel outside [0,1]");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  double& operator()(std::size_t row, std::size_t col) { return pixels_[row * width_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }

  std::span<double> pixels() noexcept { return pixels_; }
  std::span<const double> pixels() const noexcept { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

/// Three equally-shaped channels.
struct RgbImage {
  Image r, g, b;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width, bool fill = false)
      : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }

  bool operator()(std::size_t row, std::size_t col) const { return bits_[row * width_ + col] != 0; }
  void set(std::size_t row, std::size_t col, bool v = true) { bits_[row * width_ + col] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool any() const { return std::find(bits_.begin(), bits_.end(), std::uint8_t{1}) != bits_.end(); }

  /// True when every set bit of *this is also set in `other`.
  bool subset_of(const BinaryMask& other) const {
    for (std::size_t i = 0; i < bits_.size(); ++i) {
      if (bits_[i] && !other.bits_[i]) return false;
    }
    return true;
  }

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct Rect {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t w = 0;
  std::size_t h = 0;

  bool operator==(const Rect&) const = default;
};

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// Rec.601 luma.
inline Image to_grayscale(const RgbImage& rgb) {
  const auto h = rgb.r.height(), w = rgb.r.width();
  if (rgb.g.height() != h || rgb.g.width() != w || rgb.b.height() != h || rgb.b.width() != w) {
    throw ShapeError("to_grayscale: channel shapes differ");
  }
  Image out(h, w);
  auto r = rgb.r.pixels(), g = rgb.g.pixels(), b = rgb.b.pixels();
  auto o = out.pixels();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = clamp01(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
  }
  return out;
}

/// Bilinear interpolation at continuous (column x, row y). Neighbours outside
/// the raster contribute zero.
inline double bilinear_sample(const Image& img, double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  // Far outside: avoid overflowing the integer conversion below.
  if (fx0 < -2.0 || fy0 < -2.0 || fx0 > static_cast<double>(img.width()) + 1.0 ||
      fy0 > static_cast<double>(img.height()) + 1.0) {
    return 0.0;
  }
  const auto x0 = static_cast<std::ptrdiff_t>(fx0), y0 = static_cast<std::ptrdiff_t>(fy0);
  const auto W = static_cast<std::ptrdiff_t>(img.width()), H = static_cast<std::ptrdiff_t>(img.height());
  auto at = [&](std::ptrdiff_t col, std::ptrdiff_t row) -> double {
    if (col < 0 || row < 0 || col >= W || row >= H) return 0.0;
    return img(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
  };
  return (1.0 - fx) * (1.0 - fy) * at(x0, y0) + fx * (1.0 - fy) * at(x0 + 1, y0) +
         (1.0 - fx) * fy * at(x0, y0 + 1) + fx * fy * at(x0 + 1, y0 + 1);
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point default_center(const Image& img) {
  return {(static_cast<double>(img.width()) - 1.0) / 2.0, (static_cast<double>(img.height()) - 1.0) / 2.0};
}

/// Number of counter-clockwise quarter turns (0..3) when `phi` is a multiple
/// of pi/2 to within 1e-9 rad, otherwise -1.
inline int quarter_turns(double phi) {
  const double q = phi / (std::numbers::pi / 2.0);
  const double rq = std::round(q);
  if (std::abs(q - rq) * (std::numbers::pi / 2.0) > 1e-9) return -1;
  const long long k = static_cast<long long>(rq);
  return static_cast<int>(((k % 4) + 4) % 4);
}

/// Exact rotation by k quarter turns of a square image (index permutation).
inline Image rotate_quarter_turns(const Image& img, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return img;
  if (img.height() != img.width()) throw ShapeError("rotate_quarter_turns: image must be square");
  const std::size_t n = img.width();
  Image out(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      switch (k) {
        case 1: out(y, x) = img(x, n - 1 - y); break;
        case 2: out(y, x) = img(n - 1 - y, n - 1 - x); break;
        default: out(y, x) = img(n - 1 - x, y); break;
      }
    }
  }
  return out;
}

/// Counter-clockwise rotation by `phi` radians about `center`. Output pixel p
/// takes the bilinear sample at R(phi) (p - c) + c. Quarter turns of square
/// images about the default centre are exact permutations.
inline Image rotate(const Image& img, double phi, Point center) {
  const Point dc = default_center(img);
  const int k = quarter_turns(phi);
  if (k == 0) return img;
  if (k > 0 && img.height() == img.width() && center.x == dc.x && center.y == dc.y) {
    return rotate_quarter_turns(img, k);
  }
  const double c = std::cos(phi), s = std::sin(phi);
  Image out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    const double dy = static_cast<double>(y) - center.y;
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double dx = static_cast<double>(x) - center.x;
      out(y, x) = clamp01(bilinear_sample(img, center.x + c * dx - s * dy, center.y + s * dx + c * dy));
    }
  }
  return out;
}

inline Image rotate(const Image& img, double phi) { return rotate(img, phi, default_center(img)); }

/// 256-bin histogram index of a pixel value.
inline std::size_t quantize_256(double v) {
  return static_cast<std::size_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

/// Otsu's threshold on a 256-bin histogram. Returns the boundary (k + 0.5)/255
/// above the best lower-class bin k; ties keep the lowest k. A single-level
/// image returns its mean value.
inline double otsu_threshold(const Image& img) {
  std::array<double, 256> hist{};
  for (double v : img.pixels()) hist[quantize_256(v)] += 1.0;

  const double total = static_cast<double>(img.size());
  double sum_all = 0.0;
  int occupied = 0;
  for (std::size_t k = 0; k < 256; ++k) {
    sum_all += static_cast<double>(k) * hist[k];
    if (hist[k] > 0.0) ++occupied;
  }
  if (occupied < 2) {
    double mean = 0.0;
    for (double v : img.pixels()) mean += v;
    return mean / total;
  }

  double best_var = -1.0;
  std::size_t best_k = 0;
  double n0 = 0.0, s0 = 0.0;
  for (std::size_t k = 0; k < 255; ++k) {
    n0 += hist[k];
    s0 += static_cast<double>(k) * hist[k];
    const double n1 = total - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double mu0 = s0 / n0, mu1 = (sum_all - s0) / n1;
    const double var = (n0 / total) * (n1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best_k = k;
    }
  }
  return (static_cast<double>(best_k) + 0.5) / 255.0;
}

/// Splits at `t`; the side with fewer pixels becomes foreground (equal counts:
/// the bright side).
inline BinaryMask binarize(const Image& img, double t) {
  std::size_t above = 0;
  for (double v : img.pixels()) above += v > t ? 1 : 0;
  const bool bright_foreground = above <= img.size() - above;
  BinaryMask mask(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const bool is_above = img(y, x) > t;
      mask.set(y, x, is_above == bright_foreground);
    }
  }
  return mask;
}

/// Binary dilation with a 3x3 square structuring element.
inline BinaryMask dilate(const BinaryMask& mask, int iterations) {
  if (iterations < 0) throw ParameterError("dilate: iterations must be >= 0");
  BinaryMask cur = mask;
  const auto H = static_cast<std::ptrdiff_t>(mask.height()), W = static_cast<std::ptrdiff_t>(mask.width());
  for (int it = 0; it < iterations; ++it) {
    BinaryMask next(mask.height(), mask.width());
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        if (!cur(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) continue;
        for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
          for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
            const auto yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
              next.set(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
          }
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

inline Rect bounding_box(const BinaryMask& mask) {
  std::size_t x_min = mask.width(), y_min = mask.height(), x_max = 0, y_max = 0;
  bool found = false;
  for (std::size_t y = 0; y < mask.height(); ++y) {
    for (std::size_t x = 0; x < mask.width(); ++x) {
      if (!mask(y, x)) continue;
      found = true;
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  if (!found) throw EmptyMaskError("bounding_box: mask has no foreground pixels");
  return {x_min, y_min, x_max - x_min + 1, y_max - y_min + 1};
}

/// Crops `box`, scales its longer side to `side` (aspect preserved) and pastes
/// it centred on a zero side x side canvas. Samples are clamped to the crop.
inline Image center_resize(const Image& img, const Rect& box, std::size_t side = kPreprocessSide) {
  if (box.w == 0 || box.h == 0 || box.x0 + box.w > img.width() || box.y0 + box.h > img.height()) {
    throw ParameterError("center_resize: box outside image");
  }
  if (side == 0) throw ParameterError("center_resize: side must be >= 1");
  const double scale = static_cast<double>(side) / static_cast<double>(std::max(box.w, box.h));
  const auto scaled = [&](std::size_t extent) {
    const auto n = static_cast<std::size_t>(std::lround(static_cast<double>(extent) * scale));
    return std::clamp<std::size_t>(n, 1, side);
  };
  const std::size_t nw = scaled(box.w), nh = scaled(box.h);
  const std::size_t off_x = (side - nw) / 2, off_y = (side - nh) / 2;

  Image out(side, side, 0.0);
  const double max_x = static_cast<double>(box.w - 1), max_y = static_cast<double>(box.h - 1);
  for (std::size_t v = 0; v < nh; ++v) {
    const double sy = std::clamp((static_cast<double>(v) + 0.5) / scale - 0.5, 0.0, max_y);
    for (std::size_t u = 0; u < nw; ++u) {
      const double sx = std::clamp((static_cast<double>(u) + 0.5) / scale - 0.5, 0.0, max_x);
      out(off_y + v, off_x + u) =
          clamp01(bilinear_sample(img, static_cast<double>(box.x0) + sx, static_cast<double>(box.y0) + sy));
    }
  }
  return out;
}

/// Otsu -> binarize -> dilate(2) -> bounding box -> masked centred resize.
inline Image preprocess(const Image& gray, std::size_t side = kPreprocessSide) {
  if (gray.empty()) throw ParameterError("preprocess: empty image");
  const double t = otsu_threshold(gray);
  const BinaryMask mask = dilate(binarize(gray, t), kPreprocessDilations);
  const Rect box = bounding_box(mask);
  Image masked = gray;
  for (std::size_t y = 0; y < gray.height(); ++y) {
    for (std::size_t x = 0; x < gray.width(); ++x) {
      if (!mask(y, x)) masked(y, x) = 0.0;
    }
  }
  return center_resize(masked, box, side);
}

inline Image preprocess(const RgbImage& rgb, std::size_t side = kPreprocessSide) {
  return preprocess(to_grayscale(rgb), side);
}

}  // namespace s2p::imaging
