#pragma once

// Synthetic stand-in dataset (four part classes with distinct rotational
// symmetry), PGM persistence, the two experiment splits, and the training
// augmentation stream.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "s2p/error.hpp"
#include "s2p/imaging.hpp"
#include "s2p/rng.hpp"

namespace s2p::data {

using imaging::Image;

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::size_t kImageSide = imaging::kPreprocessSide;

/// Label order; alphabetical, matching the on-disk directory order.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"mutter", "stecker", "unterlegscheibe",
                                                                           "wuerfel"};

enum class ShapeClass : int {
  Nut = 0,        ///< regular hexagon with a circular hole (6-fold symmetric)
  Connector = 1,  ///< rectangle with an off-centre notch (no rotational symmetry)
  Washer = 2,     ///< annulus (continuous symmetry)
  Cube = 3,       ///< filled square (4-fold symmetric)
};

struct LabeledImage {
  Image image;
  int label = 0;
};

/// Per-sample variation of the shape generator.
struct ShapeJitter {
  double max_offset_px = 0.5;                        ///< centre offset radius
  double size_jitter = 0.10;                         ///< size factor in [1-j, 1+j]
  double max_base_rotation = std::numbers::pi / 18;  ///< base orientation in [-r, r]
  double intensity_lo = 0.70;
  double intensity_hi = 0.95;
  int supersample = 4;  ///< antialiasing samples per axis
};

namespace detail {

inline bool inside_shape(ShapeClass cls, double u, double v) {
  switch (cls) {
    case ShapeClass::Nut: {
      constexpr double kCircumradius = 44.0, kHole = 14.0;
      const double inradius = kCircumradius * std::sqrt(3.0) / 2.0;
      if (u * u + v * v < kHole * kHole) return false;
      for (int k = 0; k < 6; ++k) {
        const double a = std::numbers::pi / 6.0 + k * std::numbers::pi / 3.0;
        if (u * std::cos(a) + v * std::sin(a) > inradius) return false;
      }
      return true;
    }
    case ShapeClass::Connector: {
      if (std::abs(u) > 40.0 || std::abs(v) > 20.0) return false;
      const bool in_notch = u > 8.0 && u < 24.0 && v < -6.0;
      return !in_notch;
    }
    case ShapeClass::Washer: {
      const double r2 = u * u + v * v;
      return r2 <= 42.0 * 42.0 && r2 >= 18.0 * 18.0;
    }
    case ShapeClass::Cube:
      return std::abs(u) <= 31.0 && std::abs(v) <= 31.0;
  }
  return false;
}

}  // namespace detail

/// Antialiased shape on a zero 128x128 background.
inline Image gen_shape(ShapeClass cls, Rng& rng, const ShapeJitter& jitter = {}) {
  const double offset_r = jitter.max_offset_px * std::sqrt(rng.uniform());
  const double offset_a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double size = rng.uniform(1.0 - jitter.size_jitter, 1.0 + jitter.size_jitter);
  const double theta = rng.uniform(-jitter.max_base_rotation, jitter.max_base_rotation);
  const double intensity = rng.uniform(jitter.intensity_lo, jitter.intensity_hi);

  const double c = (static_cast<double>(kImageSide) - 1.0) / 2.0;
  const double cx = c + offset_r * std::cos(offset_a), cy = c + offset_r * std::sin(offset_a);
  const double cs = std::cos(theta), sn = std::sin(theta);
  const int ss = std::max(1, jitter.supersample);
  const double weight = 1.0 / static_cast<double>(ss * ss);

  Image img(kImageSide, kImageSide, 0.0);
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      double cover = 0.0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / ss - 0.5 - cx;
          const double py = static_cast<double>(y) + (sy + 0.5) / ss - 0.5 - cy;
          const double u = (cs * px + sn * py) / size;
          const double v = (-sn * px + cs * py) / size;
          if (detail::inside_shape(cls, u, v)) cover += weight;
        }
      }
      img(y, x) = imaging::clamp01(intensity * cover);
    }
  }
  return img;
}

/// per_class samples of every class, class-major. Sample i of class c draws
/// from its own substream, so datasets of different sizes share prefixes.
inline std::vector<LabeledImage> gen_dataset(std::size_t per_class, std::uint64_t seed, const ShapeJitter& jitter = {}) {
  if (per_class == 0) throw ParameterError("gen_dataset: per_class must be >= 1");
  std::vector<LabeledImage> out;
  out.reserve(per_class * kNumClasses);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng = Rng::substream(seed, (static_cast<std::uint64_t>(c) << 32) | i);
      out.push_back({gen_shape(static_cast<ShapeClass>(c), rng, jitter), static_cast<int>(c)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM (binary P5)

inline void save_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_pgm: cannot open " + path.string());
  const std::string header = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<char> bytes(img.size());
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(imaging::clamp01(px[i]) * 255.0)));
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("save_pgm: write failed for " + path.string());
}

inline Image parse_pgm(std::string_view buf) {
  std::size_t pos = 0;
  if (buf.size() < 2 || buf[0] != 'P') throw FormatError("pgm: missing magic", 0);
  if (buf[1] != '5') throw FormatError(std::string("pgm: unsupported variant P") + buf[1] + " (only P5)", 1);
  pos = 2;
  auto skip = [&] {
    while (pos < buf.size()) {
      const char ch = buf[pos];
      if (ch == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) -> std::size_t {
    skip();
    std::size_t value = 0;
    const auto* begin = buf.data() + pos;
    const auto [ptr, ec] = std::from_chars(begin, buf.data() + buf.size(), value);
    if (ec != std::errc() || ptr == begin) throw FormatError(std::string("pgm: bad ") + what, pos);
    pos += static_cast<std::size_t>(ptr - begin);
    return value;
  };
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (width == 0 || height == 0) throw FormatError("pgm: zero dimension", pos);
  if (maxval == 0 || maxval > 65535) throw FormatError("pgm: maxval out of range", pos);
  if (pos >= buf.size()) throw FormatError("pgm: missing raster", pos);
  ++pos;  // single whitespace before the raster
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t need = width * height * bpp;
  if (buf.size() - pos < need) throw FormatError("pgm: truncated raster", buf.size());
  std::vector<double> px(width * height);
  const auto* raw = reinterpret_cast<const unsigned char*>(buf.data() + pos);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::size_t v = bpp == 1 ? raw[i] : (static_cast<std::size_t>(raw[2 * i]) << 8) | raw[2 * i + 1];
    if (v > maxval) throw FormatError("pgm: sample exceeds maxval", pos + i * bpp);
    px[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return Image(height, width, std::move(px));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Image load_pgm(const std::filesystem::path& path) { return parse_pgm(read_file(path)); }

/// Writes `<root>/<class_name>/<index>.pgm`, index counted per class.
inline void save_dataset(const std::vector<LabeledImage>& items, const std::filesystem::path& root) {
  std::array<std::size_t, kNumClasses> next{};
  std::error_code ec;
  for (const auto& name : kClassNames) {
    std::filesystem::create_directories(root / std::string(name), ec);
    if (ec) throw IoError("save_dataset: cannot create " + (root / std::string(name)).string() + ": " + ec.message());
  }
  for (const auto& item : items) {
    const auto c = static_cast<std::size_t>(item.label);
    if (c >= kNumClasses) throw ParameterError("save_dataset: label out of range");
    save_pgm(item.image, root / std::string(kClassNames[c]) / (std::to_string(next[c]++) + ".pgm"));
  }
}

/// Reads a class-directory tree. Classes are the sorted subdirectory names;
/// files within a class are ordered by their numeric stem.
inline std::vector<LabeledImage> load_dataset(const std::filesystem::path& root,
                                              std::vector<std::string>* class_names = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("load_dataset: not a directory: " + root.string());
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw IoError("load_dataset: no class directories under " + root.string());
  std::vector<LabeledImage> out;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::pair<long long, fs::path>> files;
    for (const auto& e : fs::directory_iterator(root / classes[c])) {
      if (!e.is_regular_file() || e.path().extension() != ".pgm") continue;
      const auto stem = e.path().stem().string();
      long long idx = 0;
      const auto [p, err] = std::from_chars(stem.data(), stem.data() + stem.size(), idx);
      if (err != std::errc() || p != stem.data() + stem.size()) continue;
      files.emplace_back(idx, e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& [idx, path] : files) out.push_back({load_pgm(path), static_cast<int>(c)});
  }
  if (class_names) *class_names = classes;
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  std::vector<std::size_t> train_indices;  ///< positions in the source dataset, ascending
  std::vector<std::size_t> test_indices;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> indices_by_class(const std::vector<LabeledImage>& ds) {
  int max_label = -1;
  for (const auto& item : ds) max_label = std::max(max_label, item.label);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds[i].label < 0) throw ParameterError("split: negative label");
    by_class[static_cast<std::size_t>(ds[i].label)].push_back(i);
  }
  return by_class;
}

/// Shuffles each class with `seed`, sends the first take(n_c) of class c to train.
template <typename TakeFn>
DatasetSplit split_by(const std::vector<LabeledImage>& ds, std::uint64_t seed, TakeFn take) {
  auto by_class = indices_by_class(ds);
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& members : by_class) {
    rng.shuffle(members);
    const std::size_t n_train = take(members.size());
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  DatasetSplit split;
  for (auto i : train) split.train.push_back(ds[i]);
  for (auto i : test) split.test.push_back(ds[i]);
  split.train_indices = std::move(train);
  split.test_indices = std::move(test);
  return split;
}

}  // namespace detail

/// n_per_class training images per class; everything else is test.
inline DatasetSplit split_low_data(const std::vector<LabeledImage>& ds, std::size_t n_per_class, std::uint64_t seed) {
  for (const auto& members : detail::indices_by_class(ds)) {
    if (members.size() < n_per_class + 1) {
      throw ParameterError("split_low_data: every class needs at least n_per_class + 1 images");
    }
  }
  return detail::split_by(ds, seed, [&](std::size_t) { return n_per_class; });
}

/// Per-class proportional split, rounding toward train while keeping one test image.
inline DatasetSplit split_stratified(const std::vector<LabeledImage>& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ParameterError("split_stratified: train_frac must be in (0,1)");
  for (const auto& members : detail::indices_by_class(ds)) {
    if (members.size() < 2) throw ParameterError("split_stratified: every class needs at least 2 images");
  }
  return detail::split_by(ds, seed, [&](std::size_t n) {
    const auto k = static_cast<std::size_t>(std::ceil(train_frac * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(k, 1, n - 1);
  });
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double brightness = 0.35;  ///< multiplicative factor in [1-b, 1+b]
  double noise_sigma_max = 0.04;
  double scale_lo = 0.88;
  double scale_hi = 1.12;
  double translate = 0.06;  ///< fraction of the side, each axis
  double contrast_lo = 0.9;
  double contrast_hi = 1.1;
  bool rotation = false;  ///< uniform angle in [0, 2 pi)

  static AugmentConfig identity() { return {0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, false}; }
};

/// Presets of the two experiments: identical photometric/geometric jitter,
/// rotation only in the full-data run.
inline AugmentConfig low_data_augment() { return AugmentConfig{}; }
inline AugmentConfig full_data_augment() {
  AugmentConfig cfg;
  cfg.rotation = true;
  return cfg;
}

struct AugmentParams {
  double angle = 0.0;
  double scale = 1.0;
  double tx = 0.0;  ///< pixels
  double ty = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double noise_sigma = 0.0;
};

inline AugmentParams sample_augment(const AugmentConfig& cfg, std::size_t side, Rng& rng) {
  AugmentParams p;
  p.angle = cfg.rotation ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;
  p.scale = cfg.scale_lo == cfg.scale_hi ? cfg.scale_lo : rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const double t = cfg.translate * static_cast<double>(side);
  p.tx = t > 0.0 ? rng.uniform(-t, t) : 0.0;
  p.ty = t > 0.0 ? rng.uniform(-t, t) : 0.0;
  p.brightness = cfg.brightness > 0.0 ? rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness) : 1.0;
  p.contrast = cfg.contrast_lo == cfg.contrast_hi ? cfg.contrast_lo : rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
  p.noise_sigma = cfg.noise_sigma_max > 0.0 ? rng.uniform(0.0, cfg.noise_sigma_max) : 0.0;
  return p;
}

/// Rotation, scale and translation (composed into one bilinear resample about
/// the centre), then brightness, contrast, noise, clamp.
inline Image apply_augment(const Image& img, const AugmentParams& p, Rng& rng) {
  Image out = img;
  if (p.angle != 0.0 || p.scale != 1.0 || p.tx != 0.0 || p.ty != 0.0) {
    const imaging::Point c = imaging::default_center(img);
    const double cs = std::cos(p.angle), sn = std::sin(p.angle);
    for (std::size_t y = 0; y < img.height(); ++y) {
      for (std::size_t x = 0; x < img.width(); ++x) {
        const double qx = (static_cast<double>(x) - c.x - p.tx) / p.scale;
        const double qy = (static_cast<double>(y) - c.y - p.ty) / p.scale;
        out(y, x) = imaging::bilinear_sample(img, c.x + cs * qx - sn * qy, c.y + sn * qx + cs * qy);
      }
    }
  }
  auto px = out.pixels();
  if (p.brightness != 1.0) {
    for (auto& v : px) v *= p.brightness;
  }
  if (p.contrast != 1.0) {
    double mean = 0.0;
    for (double v : px) mean += v;
    mean /= static_cast<double>(px.size());
    for (auto& v : px) v = mean + p.contrast * (v - mean);
  }
  if (p.noise_sigma > 0.0) {
    for (auto& v : px) v += rng.normal() * p.noise_sigma;
  }
  for (auto& v : px) v = imaging::clamp01(v);
  return out;
}

inline Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(img, sample_augment(cfg, img.width(), rng), rng);
}

}  // namespace s2p::data
