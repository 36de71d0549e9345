#pragma once

// Twelve-angle rotation sweep over a held-out set, its summary statistics and
// CSV/JSON emission.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "s2p/data.hpp"
#include "s2p/error.hpp"
#include "s2p/imaging.hpp"
#include "s2p/models.hpp"

namespace s2p::eval {

inline constexpr std::size_t kSweepAngles = 12;
inline constexpr int kAngleStepDeg = 30;

struct Summary {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

/// Arithmetic mean and population (divide-by-n) standard deviation.
inline Summary summarize(std::span<const double> values) {
  if (values.empty()) throw ParameterError("summarize: no values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  ///< [true][predicted]

struct AngleSweepReport {
  std::string model_name;
  std::string experiment;
  std::size_t num_classes = 0;
  std::size_t n_total = 0;
  std::vector<int> angles_deg;
  std::vector<std::size_t> n_correct;
  std::vector<double> accuracy;  ///< fraction in [0,1]
  std::vector<ConfusionMatrix> confusion;
  double mean = 0.0;  ///< of accuracy, fraction
  double std = 0.0;

  /// Percent accuracies, the unit of the printed tables.
  std::vector<double> accuracy_pct() const {
    std::vector<double> out;
    for (double a : accuracy) out.push_back(100.0 * a);
    return out;
  }

  bool operator==(const AngleSweepReport&) const = default;
};

inline std::vector<int> sweep_angles() {
  std::vector<int> a;
  for (std::size_t i = 0; i < kSweepAngles; ++i) a.push_back(static_cast<int>(i) * kAngleStepDeg);
  return a;
}

/// Rotation used by the protocol: exact permutation at multiples of 90
/// degrees, bilinear with zero fill otherwise.
inline imaging::Image rotate_degrees(const imaging::Image& img, int deg) {
  const int norm = ((deg % 360) + 360) % 360;
  if (norm % 90 == 0 && img.height() == img.width()) return imaging::rotate_quarter_turns(img, norm / 90);
  return imaging::rotate(img, static_cast<double>(norm) * std::numbers::pi / 180.0);
}

/// Generic sweep over any classifier `f(batch of images) -> labels`.
template <typename Classify>
AngleSweepReport angle_sweep_with(Classify&& classify, const std::vector<data::LabeledImage>& test,
                                  std::size_t num_classes, std::string model_name, std::size_t batch = 16) {
  if (test.empty()) throw ParameterError("angle_sweep: empty test set");
  AngleSweepReport rep;
  rep.model_name = std::move(model_name);
  rep.num_classes = num_classes;
  rep.n_total = test.size();
  rep.angles_deg = sweep_angles();
  for (int deg : rep.angles_deg) {
    ConfusionMatrix cm(num_classes, std::vector<std::size_t>(num_classes, 0));
    std::size_t correct = 0;
    for (std::size_t start = 0; start < test.size(); start += batch) {
      const std::size_t n = std::min(batch, test.size() - start);
      std::vector<imaging::Image> rotated;
      rotated.reserve(n);
      for (std::size_t i = 0; i < n; ++i) rotated.push_back(rotate_degrees(test[start + i].image, deg));
      std::vector<const imaging::Image*> ptrs;
      for (const auto& im : rotated) ptrs.push_back(&im);
      const std::vector<int> labels = classify(std::span<const imaging::Image* const>(ptrs));
      for (std::size_t i = 0; i < n; ++i) {
        const int truth = test[start + i].label, pred = labels[i];
        if (truth < 0 || pred < 0 || static_cast<std::size_t>(truth) >= num_classes ||
            static_cast<std::size_t>(pred) >= num_classes) {
          throw ParameterError("angle_sweep: label out of range");
        }
        ++cm[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
        correct += truth == pred ? 1 : 0;
      }
    }
    rep.n_correct.push_back(correct);
    rep.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    rep.confusion.push_back(std::move(cm));
  }
  const auto s = summarize(rep.accuracy);
  rep.mean = s.mean;
  rep.std = s.std;
  return rep;
}

/// Sweeps a trained model (switched to eval mode) over the test set.
inline AngleSweepReport angle_sweep(models::Model& model, const std::vector<data::LabeledImage>& test) {
  model.net.set_mode(nn::Mode::Eval);
  auto classify = [&](std::span<const imaging::Image* const> images) {
    std::vector<int> out;
    for (const auto& p : models::predict_batch(model, images)) out.push_back(p.label);
    return out;
  };
  return angle_sweep_with(classify, test, model.num_classes, model.name());
}

inline std::string format_pct(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", pct);
  return buf;
}

inline std::string report_csv(const AngleSweepReport& rep) {
  std::string out = "angle_deg,accuracy_pct,n_correct,n_total\n";
  for (std::size_t i = 0; i < rep.angles_deg.size(); ++i) {
    out += std::to_string(rep.angles_deg[i]) + "," + format_pct(100.0 * rep.accuracy[i]) + "," +
           std::to_string(rep.n_correct[i]) + "," + std::to_string(rep.n_total) + "\n";
  }
  return out;
}

inline nlohmann::ordered_json report_to_json(const AngleSweepReport& rep) {
  nlohmann::ordered_json j;
  j["model"] = rep.model_name;
  j["experiment"] = rep.experiment;
  j["num_classes"] = rep.num_classes;
  j["n_total"] = rep.n_total;
  j["angles_deg"] = rep.angles_deg;
  j["n_correct"] = rep.n_correct;
  j["accuracy"] = rep.accuracy;
  j["confusion"] = rep.confusion;
  j["mean"] = rep.mean;
  j["std"] = rep.std;
  return j;
}

inline AngleSweepReport report_from_json(const nlohmann::ordered_json& j) {
  try {
    AngleSweepReport rep;
    rep.model_name = j.at("model").get<std::string>();
    rep.experiment = j.at("experiment").get<std::string>();
    rep.num_classes = j.at("num_classes").get<std::size_t>();
    rep.n_total = j.at("n_total").get<std::size_t>();
    rep.angles_deg = j.at("angles_deg").get<std::vector<int>>();
    rep.n_correct = j.at("n_correct").get<std::vector<std::size_t>>();
    rep.accuracy = j.at("accuracy").get<std::vector<double>>();
    rep.confusion = j.at("confusion").get<std::vector<ConfusionMatrix>>();
    rep.mean = j.at("mean").get<double>();
    rep.std = j.at("std").get<double>();
    if (rep.angles_deg.size() != rep.accuracy.size() || rep.n_correct.size() != rep.accuracy.size() ||
        rep.confusion.size() != rep.accuracy.size()) {
      throw FormatError("sweep report: per-angle arrays differ in length");
    }
    return rep;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("sweep report: ") + ex.what());
  }
}

enum class ReportFormat { Csv, Json };

inline void emit_report(const AngleSweepReport& rep, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("emit_report: cannot open " + path.string());
  const std::string text = format == ReportFormat::Csv ? report_csv(rep) : report_to_json(rep).dump(2) + "\n";
  f << text;
  if (!f) throw IoError("emit_report: write failed for " + path.string());
}

inline AngleSweepReport load_report(const std::filesystem::path& path) {
  try {
    return report_from_json(nlohmann::ordered_json::parse(data::read_file(path)));
  } catch (const nlohmann::json::parse_error& ex) {
    throw FormatError(std::string("sweep report: ") + ex.what(), ex.byte);
  }
}

/// Side-by-side table of two sweeps with delta = a - b in percentage points,
/// followed by Mean and Std rows.
inline std::string compare_csv(const AngleSweepReport& a, const AngleSweepReport& b) {
  if (a.angles_deg != b.angles_deg) throw ParameterError("compare: reports use different angles");
  const std::string an = a.model_name + "_pct", bn = b.model_name == a.model_name ? b.model_name + "_b_pct"
                                                                                   : b.model_name + "_pct";
  std::string out = "angle_deg," + an + "," + bn + ",delta_pp\n";
  const auto pa = a.accuracy_pct(), pb = b.accuracy_pct();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    out += std::to_string(a.angles_deg[i]) + "," + format_pct(pa[i]) + "," + format_pct(pb[i]) + "," +
           format_pct(pa[i] - pb[i]) + "\n";
  }
  const auto sa = summarize(pa), sb = summarize(pb);
  out += "mean," + format_pct(sa.mean) + "," + format_pct(sb.mean) + "," + format_pct(sa.mean - sb.mean) + "\n";
  out += "std," + format_pct(sa.std) + "," + format_pct(sb.std) + ",\n";
  return out;
}

}  // namespace s2p::eval
