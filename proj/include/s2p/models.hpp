#pragma once

// The two classifiers (spectral front end + MLP head, and the convolutional
// baseline), their training loop and the checkpoint file format.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2p/data.hpp"
#include "s2p/error.hpp"
#include "s2p/imaging.hpp"
#include "s2p/nn/layers.hpp"
#include "s2p/nn/loss.hpp"
#include "s2p/nn/optim.hpp"
#include "s2p/nn/sequential.hpp"
#include "s2p/rng.hpp"
#include "s2p/spectral.hpp"

namespace s2p::models {

using imaging::Image;
using nn::Mode;
using nn::Tensor;

enum class Architecture { S2P, SimpleCNN };

inline const char* architecture_name(Architecture a) { return a == Architecture::S2P ? "s2p" : "cnn"; }

inline Architecture parse_architecture(std::string_view name) {
  if (name == "s2p") return Architecture::S2P;
  if (name == "cnn") return Architecture::SimpleCNN;
  throw ParameterError("unknown model name '" + std::string(name) + "' (expected s2p or cnn)");
}

/// 64 -> 64 -> 32 -> C head: Linear, BatchNorm, ReLU, Dropout(0.3); Linear,
/// BatchNorm, ReLU, Dropout(0.2); Linear.
template <typename T>
nn::Sequential<T> build_s2p_head(std::size_t num_classes, Rng& rng) {
  nn::Sequential<T> net;
  net.template emplace<nn::Linear<T>>("fc1", spectral::kFeatureDim, 64, rng);
  net.template emplace<nn::BatchNorm<T>>("bn1", 64);
  net.template emplace<nn::ReLU<T>>("relu1");
  net.template emplace<nn::Dropout<T>>("drop1", 0.3);
  net.template emplace<nn::Linear<T>>("fc2", 64, 32, rng);
  net.template emplace<nn::BatchNorm<T>>("bn2", 32);
  net.template emplace<nn::ReLU<T>>("relu2");
  net.template emplace<nn::Dropout<T>>("drop2", 0.2);
  net.template emplace<nn::Linear<T>>("fc3", 32, num_classes, rng);
  return net;
}

/// Three [Conv3x3, BatchNorm, ReLU, MaxPool2x2] blocks (1 -> 16 -> 32 -> 64
/// channels, 128 -> 16 spatial), then Linear(16384 -> 128), ReLU,
/// Dropout(0.4), Linear(128 -> C).
template <typename T>
nn::Sequential<T> build_simple_cnn_net(std::size_t num_classes, Rng& rng, std::size_t side = data::kImageSide) {
  nn::Sequential<T> net;
  const std::size_t widths[] = {1, 16, 32, 64};
  for (std::size_t b = 0; b < 3; ++b) {
    const auto id = std::to_string(b + 1);
    net.template emplace<nn::Conv3x3<T>>("conv" + id, widths[b], widths[b + 1], rng);
    net.template emplace<nn::BatchNorm<T>>("bn" + id, widths[b + 1]);
    net.template emplace<nn::ReLU<T>>("relu" + id);
    net.template emplace<nn::MaxPool2x2<T>>("pool" + id);
  }
  const std::size_t final_side = side / 8;
  net.template emplace<nn::Flatten<T>>("flatten");
  net.template emplace<nn::Linear<T>>("fc1", 64 * final_side * final_side, 128, rng);
  net.template emplace<nn::ReLU<T>>("relu4");
  net.template emplace<nn::Dropout<T>>("drop", 0.4);
  net.template emplace<nn::Linear<T>>("fc2", 128, num_classes, rng);
  return net;
}

/// A classifier plus the fixed transform applied to each input image.
struct Model {
  Architecture arch = Architecture::S2P;
  std::size_t num_classes = 0;
  nn::Sequential<float> net;
  std::shared_ptr<const spectral::PolarGrid> grid;  ///< S2P front end; null for the CNN

  std::string name() const { return architecture_name(arch); }
  std::size_t trainable_parameter_count() { return net.parameter_count(); }
  std::size_t front_end_parameter_count() const { return 0; }

  /// Stacks the per-image network inputs: [B, 64] spectral features or [B, 1, H, W] pixels.
  Tensor<float> prepare_batch(std::span<const Image* const> images) const {
    const std::size_t batch = images.size();
    for (const Image* img : images) {
      if (img->height() != data::kImageSide || img->width() != data::kImageSide) {
        throw ShapeError("model input must be 128x128, got " + std::to_string(img->height()) + "x" +
                         std::to_string(img->width()));
      }
    }
    if (arch == Architecture::S2P) {
      Tensor<float> x({batch, spectral::kFeatureDim});
      for (std::size_t b = 0; b < batch; ++b) {
        const auto f = spectral::extract_features(*images[b], *grid);
        for (std::size_t k = 0; k < f.size(); ++k) x[b * spectral::kFeatureDim + k] = static_cast<float>(f[k]);
      }
      return x;
    }
    const std::size_t n = data::kImageSide * data::kImageSide;
    Tensor<float> x({batch, 1, data::kImageSide, data::kImageSide});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto px = images[b]->pixels();
      for (std::size_t i = 0; i < n; ++i) x[b * n + i] = static_cast<float>(px[i]);
    }
    return x;
  }
};

inline Model build_s2p_classifier(std::size_t num_classes, std::uint64_t seed = 0) {
  if (num_classes < 2) throw ParameterError("build_s2p_classifier: need at least 2 classes");
  Rng rng(seed);
  Model m;
  m.arch = Architecture::S2P;
  m.num_classes = num_classes;
  m.net = build_s2p_head<float>(num_classes, rng);
  m.grid = std::make_shared<const spectral::PolarGrid>(spectral::build_polar_grid());
  return m;
}

inline Model build_simple_cnn(std::size_t num_classes, std::uint64_t seed = 0) {
  if (num_classes < 2) throw ParameterError("build_simple_cnn: need at least 2 classes");
  Rng rng(seed);
  Model m;
  m.arch = Architecture::SimpleCNN;
  m.num_classes = num_classes;
  m.net = build_simple_cnn_net<float>(num_classes, rng);
  return m;
}

inline Model build_model(Architecture arch, std::size_t num_classes, std::uint64_t seed = 0) {
  return arch == Architecture::S2P ? build_s2p_classifier(num_classes, seed) : build_simple_cnn(num_classes, seed);
}

struct Prediction {
  int label = 0;
  std::vector<float> logits;
};

/// Lowest index wins ties.
inline int argmax(std::span<const float> logits) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    if (logits[j] > logits[best]) best = j;
  }
  return static_cast<int>(best);
}

/// Eval-mode inference on a batch of images.
inline std::vector<Prediction> predict_batch(Model& model, std::span<const Image* const> images) {
  model.net.set_mode(Mode::Eval);
  const auto logits = model.net.forward(model.prepare_batch(images), nullptr);
  nn::require_finite(logits, "predict");
  std::vector<Prediction> out(images.size());
  const std::size_t C = model.num_classes;
  for (std::size_t b = 0; b < images.size(); ++b) {
    out[b].logits.assign(logits.data() + b * C, logits.data() + (b + 1) * C);
    out[b].label = argmax(out[b].logits);
  }
  return out;
}

inline Prediction predict(Model& model, const Image& img) {
  const Image* one[] = {&img};
  return predict_batch(model, one).front();
}

// ---------------------------------------------------------------------------
// Checkpoints

struct TensorRecord {
  std::string name;
  nn::Shape shape;
  std::vector<float> data;

  bool operator==(const TensorRecord&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', '2', 'P', 'C'};

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::string model_name;
  std::uint32_t num_classes = 0;
  std::vector<TensorRecord> tensors;  ///< parameters, then buffers, in layer order
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  /// Run provenance written by the CLI (experiment, seeds, ...). Free-form.
  nlohmann::ordered_json run = nlohmann::ordered_json::object();

  bool operator==(const Checkpoint&) const = default;
};

inline std::vector<TensorRecord> capture_state(Model& model) {
  std::vector<TensorRecord> out;
  for (auto* p : model.net.parameters()) out.push_back({p->name, p->value.shape(), p->value.storage()});
  for (auto* b : model.net.buffers()) out.push_back({b->name, b->value.shape(), b->value.storage()});
  return out;
}

/// Copies tensors into the model; names, count and shapes must match exactly.
inline void restore_state(Model& model, const std::vector<TensorRecord>& tensors) {
  std::vector<Tensor<float>*> targets;
  std::vector<const std::string*> names;
  for (auto* p : model.net.parameters()) {
    targets.push_back(&p->value);
    names.push_back(&p->name);
  }
  for (auto* b : model.net.buffers()) {
    targets.push_back(&b->value);
    names.push_back(&b->name);
  }
  if (targets.size() != tensors.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                     std::to_string(targets.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != *names[i]) throw ShapeError("checkpoint tensor '" + tensors[i].name + "' != '" + *names[i] + "'");
    if (tensors[i].shape != targets[i]->shape()) {
      throw ShapeError("checkpoint tensor '" + tensors[i].name + "' has shape " + nn::shape_str(tensors[i].shape) +
                       ", model expects " + nn::shape_str(targets[i]->shape()));
    }
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) targets[i]->storage() = tensors[i].data;
}

inline Checkpoint make_checkpoint(Model& model) {
  Checkpoint c;
  c.model_name = model.name();
  c.num_classes = static_cast<std::uint32_t>(model.num_classes);
  c.tensors = capture_state(model);
  return c;
}

/// Loads `ckpt` into a model of matching architecture and class count.
inline void apply_checkpoint(Model& model, const Checkpoint& ckpt) {
  if (ckpt.model_name != model.name()) {
    throw ShapeError("checkpoint is for model '" + ckpt.model_name + "', not '" + model.name() + "'");
  }
  if (ckpt.num_classes != model.num_classes) {
    throw ShapeError("checkpoint has " + std::to_string(ckpt.num_classes) + " classes, model has " +
                     std::to_string(model.num_classes));
  }
  restore_state(model, ckpt.tensors);
  model.net.set_mode(Mode::Eval);
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m = build_model(parse_architecture(ckpt.model_name), ckpt.num_classes);
  apply_checkpoint(m, ckpt);
  return m;
}

namespace detail {

class ByteWriter {
 public:
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.append(s);
  }
  void raw(std::string_view s) { bytes_.append(s); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view buf) : buf_(buf) {}
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf_[pos_ + i]) << (8 * i));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(buf_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Little-endian layout: "S2PC", u16 version, str model name, u32 classes,
/// u32 record count, records {str name, u32 rank, u32 dims[rank], f32 data[]},
/// then str JSON trailer {best_epoch, history, run}. str = u32 length + bytes.
inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u16(c.version);
  w.str(c.model_name);
  w.u32(c.num_classes);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  nlohmann::ordered_json trailer;
  trailer["best_epoch"] = c.best_epoch;
  auto& hist = trailer["history"] = nlohmann::ordered_json::array();
  for (const auto& e : c.history) hist.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}});
  trailer["run"] = c.run;
  w.str(trailer.dump());
  return w.bytes();
}

inline Checkpoint parse_checkpoint(std::string_view buf) {
  detail::ByteReader r(buf);
  const auto magic = r.raw(4, "magic");
  if (magic != std::string_view(kCheckpointMagic, 4)) throw FormatError("not a checkpoint (bad magic)", 0);
  Checkpoint c;
  const std::size_t version_at = r.offset();
  c.version = r.u16("version");
  if (c.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(c.version), version_at);
  }
  c.model_name = r.str("model name");
  c.num_classes = r.u32("class count");
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.str("tensor name");
    const std::size_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), rank_at);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.u32("tensor dims"));
      n *= t.shape.back();
    }
    r.need(n * 4, "tensor data");
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32("tensor data");
    c.tensors.push_back(std::move(t));
  }
  const std::size_t trailer_at = r.offset();
  const std::string trailer_text = r.str("json trailer");
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint trailer", r.offset());
  nlohmann::ordered_json trailer;
  try {
    trailer = nlohmann::ordered_json::parse(trailer_text);
    c.best_epoch = trailer.at("best_epoch").get<std::size_t>();
    for (const auto& e : trailer.at("history")) {
      c.history.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(), e.at("lr").get<double>()});
    }
    c.run = trailer.at("run");
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("checkpoint trailer: ") + ex.what(), trailer_at);
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(data::read_file(path));
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs_max = 200;
  std::size_t batch = 16;
  std::size_t patience = 30;
  double min_delta = 1e-4;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  nn::LossKind loss = nn::LossKind::Focal;
  std::size_t augment_factor = 50;  ///< copies per training image per epoch; copy 0 is the original
  data::AugmentConfig augment = data::low_data_augment();
  std::uint64_t seed = 0;

  /// Loss used for each architecture: focal for S2P, cross-entropy for the CNN.
  static nn::LossKind default_loss(Architecture a) {
    return a == Architecture::S2P ? nn::LossKind::Focal : nn::LossKind::CrossEntropy;
  }

  void validate() const {
    if (epochs_max == 0 || batch < 2 || patience == 0 || augment_factor == 0 || !(lr > 0.0) ||
        weight_decay < 0.0 || min_delta < 0.0) {
      throw ParameterError("TrainConfig: epochs_max, patience, augment_factor, lr must be positive; batch >= 2");
    }
  }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch AdamW over the augmented stream with a per-epoch cosine
/// warm-restart schedule. Stops after `patience` epochs without a mean
/// training-loss improvement of at least `min_delta`; the model ends in eval
/// mode holding the best-loss weights, which are also returned.
inline Checkpoint train(Model& model, const std::vector<data::LabeledImage>& train_set, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ParameterError("train: empty training set");
  if (train_set.size() * cfg.augment_factor < 2) throw ParameterError("train: need at least 2 samples per epoch");
  for (const auto& item : train_set) {
    if (item.label < 0 || static_cast<std::size_t>(item.label) >= model.num_classes) {
      throw ParameterError("train: label out of range for model");
    }
  }
  Rng rng(cfg.seed);
  nn::AdamW<float> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay, false});
  const nn::CosineWarmRestarts schedule{cfg.lr, 0.0, 20, 2};
  auto params = model.net.parameters();

  struct Slot {
    std::uint32_t image;
    std::uint32_t copy;
  };
  std::vector<Slot> stream;
  stream.reserve(train_set.size() * cfg.augment_factor);

  Checkpoint best = make_checkpoint(model);
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_improve = 0;
  std::vector<EpochRecord> history;

  for (std::size_t epoch = 0; epoch < cfg.epochs_max; ++epoch) {
    const double lr = schedule.lr(epoch);
    stream.clear();
    for (std::uint32_t i = 0; i < train_set.size(); ++i) {
      for (std::uint32_t k = 0; k < cfg.augment_factor; ++k) stream.push_back({i, k});
    }
    rng.shuffle(stream);

    model.net.set_mode(Mode::Train);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<Image> augmented;
    std::vector<const Image*> batch_images;
    std::vector<int> labels;
    for (std::size_t start = 0; start < stream.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, stream.size() - start);
      if (n < 2) break;  // train-mode BatchNorm needs two samples
      augmented.clear();
      augmented.reserve(n);
      labels.clear();
      for (std::size_t b = 0; b < n; ++b) {
        const Slot s = stream[start + b];
        const auto& src = train_set[s.image];
        augmented.push_back(s.copy == 0 ? src.image : data::augment(src.image, cfg.augment, rng));
        labels.push_back(src.label);
      }
      batch_images.clear();
      for (const auto& im : augmented) batch_images.push_back(&im);

      model.net.zero_grad();
      const auto logits = model.net.forward(model.prepare_batch(batch_images), &rng);
      const auto res = nn::compute_loss(cfg.loss, logits, labels);
      if (!std::isfinite(res.value) || !logits.all_finite()) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      model.net.backward(res.grad);
      opt.step(params, lr);
      loss_sum += static_cast<double>(res.value) * static_cast<double>(n);
      seen += n;
    }
    const double mean_loss = loss_sum / static_cast<double>(seen);
    history.push_back({epoch, mean_loss, lr});
    if (on_epoch) on_epoch(history.back());

    if (mean_loss < best_loss - cfg.min_delta) {
      best_loss = mean_loss;
      since_improve = 0;
      best.tensors = capture_state(model);
      best.best_epoch = epoch;
    } else if (++since_improve >= cfg.patience) {
      break;
    }
  }
  restore_state(model, best.tensors);
  model.net.set_mode(Mode::Eval);
  best.history = std::move(history);
  return best;
}

}  // namespace s2p::models
