// Acceptance harness. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails that is not listed in kKnownFailures.
//
// RUN: s2p_acceptance --cli <path to s2p> --work <scratch dir> [--profile smoke|complete]

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "s2p/data.hpp"
#include "s2p/eval.hpp"
#include "s2p/fft.hpp"
#include "s2p/imaging.hpp"
#include "s2p/models.hpp"
#include "s2p/nn/grad_check.hpp"
#include "s2p/spectral.hpp"

using namespace s2p;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Criteria whose target cannot be met by any correct implementation; see README.
const std::map<int, std::string> kKnownFailures = {
    {9, "printed CNN std 22.9 does not follow from the printed CNN column (population std 22.68, sample std 23.69)"},
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// ---------------------------------------------------------------------------

Outcome c1_parameter_counts() {
  auto a = models::build_s2p_classifier(4);
  auto b = models::build_simple_cnn(4);
  const auto na = a.trainable_parameter_count(), nb = b.trainable_parameter_count();
  return {na == 6564 && nb == 2121316, "s2p " + std::to_string(na) + " (6564), cnn " + std::to_string(nb) + " (2121316)"};
}

Outcome c2_exact_shifts() {
  Rng rng(2002);
  const fft::Radix2Plan plan(spectral::kAngles);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    spectral::PolarMap pm(spectral::kRadii, spectral::kAngles);
    for (auto& v : pm.values) v = rng.uniform();
    const auto ref = spectral::harmonic_signature(pm, plan);
    for (std::ptrdiff_t m = 1; m < static_cast<std::ptrdiff_t>(spectral::kAngles); ++m) {
      const auto s = spectral::harmonic_signature(spectral::shift_columns(pm, m), plan);
      for (std::size_t i = 0; i < s.values.size(); ++i) worst = std::max(worst, rel_err(s.values[i], ref.values[i], 1e-12));
    }
  }
  return {worst <= 1e-9, "1000 maps x 127 shifts, max rel " + fmt("%.2e", worst) + " (<= 1e-9)"};
}

Outcome c3_lattice_rotation() {
  const auto grid = spectral::build_polar_grid();
  const auto ds = data::gen_dataset(25, 3003);
  auto model = models::build_s2p_classifier(4, 3);
  double worst = 0.0;
  std::size_t mismatched = 0;
  for (const auto& item : ds) {
    const auto f0 = spectral::extract_features(item.image, grid);
    const int p0 = models::predict(model, item.image).label;
    for (int k = 1; k < 4; ++k) {
      const auto rotated = imaging::rotate_quarter_turns(item.image, k);
      const auto fk = spectral::extract_features(rotated, grid);
      for (std::size_t i = 0; i < f0.size(); ++i) worst = std::max(worst, rel_err(fk[i], f0[i], 1e-12));
      if (models::predict(model, rotated).label != p0) ++mismatched;
    }
  }
  return {worst <= 1e-5 && mismatched == 0, "100 images, max rel " + fmt("%.2e", worst) + " (<= 1e-5), " +
                                                 std::to_string(mismatched) + " prediction changes (0)"};
}

Outcome c4_fft_oracle() {
  Rng rng(4004);
  const std::size_t n = 128;
  std::vector<std::complex<long double>> twiddle(n);
  for (std::size_t t = 0; t < n; ++t) {
    const long double a = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>(t) / n;
    twiddle[t] = {std::cos(a), std::sin(a)};
  }
  double worst = 0.0, worst_parseval = 0.0;
  const fft::Radix2Plan plan(n);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto got = plan.rfft_magnitude(x);
    long double energy_time = 0;
    for (double v : x) energy_time += static_cast<long double>(v) * v;
    long double energy_freq = 0;
    for (std::size_t k = 0; k <= n / 2; ++k) {
      std::complex<long double> s = 0;
      for (std::size_t t = 0; t < n; ++t) s += static_cast<long double>(x[t]) * twiddle[(k * t) % n];
      worst = std::max(worst, rel_err(got[k], static_cast<double>(std::abs(s)), 1e-12));
      const long double g2 = static_cast<long double>(got[k]) * got[k];
      energy_freq += (k == 0 || k == n / 2) ? g2 : 2 * g2;
    }
    worst_parseval = std::max(worst_parseval, static_cast<double>(std::abs(energy_freq / n - energy_time) / energy_time));
  }
  return {worst <= 1e-9 && worst_parseval <= 1e-9,
          "1000 signals, max rel " + fmt("%.2e", worst) + ", Parseval " + fmt("%.2e", worst_parseval) + " (<= 1e-9)"};
}

Outcome c5_gradients() {
  using nn::LossKind;
  using nn::Mode;
  using T = double;
  Rng rng(5005);
  auto randn = [&](nn::Shape s) {
    nn::Tensor<T> t(std::move(s));
    for (auto& v : t.values()) v = rng.normal();
    return t;
  };
  auto labels = [&](std::size_t b, std::size_t c) {
    std::vector<int> y(b);
    for (auto& v : y) v = static_cast<int>(rng.below(c));
    return y;
  };
  std::vector<std::pair<std::string, double>> results;
  auto both = [&](const std::string& tag, nn::Sequential<T>& net, const nn::Tensor<T>& x, const std::vector<int>& y) {
    for (auto loss : {LossKind::Focal, LossKind::CrossEntropy}) {
      const double p = nn::grad_check(net, x, y, loss).max_relative_error;
      const double i = nn::input_grad_check(net, x, y, loss);
      results.emplace_back(tag + "/" + nn::to_string(loss), std::max(p, i));
    }
  };

  {
    nn::Sequential<T> net;
    net.emplace<nn::Linear<T>>("fc1", 6, 5, rng);
    net.emplace<nn::ReLU<T>>("relu");
    net.emplace<nn::Linear<T>>("fc2", 5, 3, rng);
    both("linear+relu", net, randn({4, 6}), labels(4, 3));
  }
  for (Mode m : {Mode::Train, Mode::Eval}) {
    nn::Sequential<T> net;
    net.emplace<nn::Linear<T>>("fc1", 4, 5, rng);
    net.emplace<nn::BatchNorm<T>>("bn", 5);
    net.emplace<nn::Linear<T>>("fc2", 5, 3, rng);
    for (auto* p : net.parameters())
      for (auto& v : p->value.values()) v += 0.2 * rng.normal();
    for (auto* b : net.buffers())
      for (auto& v : b->value.values()) v = b->name.ends_with("var") ? 0.5 + rng.uniform() : rng.normal();
    net.set_mode(m);
    both(m == Mode::Train ? "batchnorm1d/train" : "batchnorm1d/eval", net, randn({6, 4}), labels(6, 3));
  }
  {
    nn::Sequential<T> net;
    net.emplace<nn::Conv3x3<T>>("conv", 2, 3, rng);
    net.emplace<nn::BatchNorm<T>>("bn", 3);
    net.emplace<nn::ReLU<T>>("relu");
    net.emplace<nn::MaxPool2x2<T>>("pool");
    net.emplace<nn::Flatten<T>>("flatten");
    net.emplace<nn::Linear<T>>("fc", 12, 4, rng);
    net.set_mode(Mode::Train);
    both("conv+bn2d+pool+flatten", net, randn({3, 2, 4, 4}), labels(3, 4));
  }
  {
    // Train-mode dropout with the mask held fixed: every probe replays the same stream.
    nn::Sequential<T> net;
    net.emplace<nn::Linear<T>>("fc1", 5, 8, rng);
    net.emplace<nn::Dropout<T>>("drop", 0.3);
    net.emplace<nn::Linear<T>>("fc2", 8, 3, rng);
    net.set_mode(Mode::Train);
    const auto x = randn({4, 5});
    const auto y = labels(4, 3);
    for (auto loss : {LossKind::Focal, LossKind::CrossEntropy}) {
      auto eval_loss = [&] {
        Rng r(77);
        return static_cast<double>(nn::compute_loss(loss, net.forward(x, &r), y).value);
      };
      net.zero_grad();
      {
        Rng r(77);
        const auto out = net.forward(x, &r);
        net.backward(nn::compute_loss(loss, out, y).grad);
      }
      double worst = 0.0;
      for (auto* p : net.parameters()) {
        for (std::size_t j = 0; j < p->value.size(); ++j) {
          const T o = p->value[j];
          p->value[j] = o + 1e-5;
          const double up = eval_loss();
          p->value[j] = o - 1e-5;
          const double dn = eval_loss();
          p->value[j] = o;
          worst = std::max(worst, nn::relative_error(p->grad[j], (up - dn) / 2e-5));
        }
      }
      results.emplace_back(std::string("dropout/train/") + nn::to_string(loss), worst);
    }
  }
  {
    auto head = models::build_s2p_head<T>(4, rng);
    head.set_mode(Mode::Train);
    head.set_dropout_mode(Mode::Eval);
    const auto x = randn({8, 64});
    const auto y = labels(8, 4);
    for (auto loss : {LossKind::Focal, LossKind::CrossEntropy}) {
      const auto r = nn::grad_check(head, x, y, loss);
      results.emplace_back(std::string("s2p head (") + std::to_string(r.checked) + ")/" + nn::to_string(loss),
                           r.max_relative_error);
    }
  }
  double worst = 0.0;
  std::string where;
  for (const auto& [tag, e] : results) {
    if (e > worst) {
      worst = e;
      where = tag;
    }
  }
  return {worst <= 1e-4, std::to_string(results.size()) + " checks, max rel " + fmt("%.2e", worst) + " at " + where +
                             " (<= 1e-4)"};
}

Outcome c6_harmonics() {
  const auto grid = spectral::build_polar_grid();
  const auto ds = data::gen_dataset(50, 6006);
  std::size_t nut_ok = 0, cube_ok = 0;
  double washer_worst = 0.0;
  for (const auto& item : ds) {
    const auto f = spectral::extract_features(item.image, grid);
    std::size_t dom = 1;
    for (std::size_t k = 2; k < spectral::kHarmonics; ++k) {
      if (f[k] > f[dom]) dom = k;
    }
    const auto cls = static_cast<data::ShapeClass>(item.label);
    if (cls == data::ShapeClass::Nut && dom % 6 == 0) ++nut_ok;
    if (cls == data::ShapeClass::Cube && dom % 4 == 0) ++cube_ok;
    if (cls == data::ShapeClass::Washer) {
      double e = 0.0;
      for (std::size_t k = 1; k < spectral::kHarmonics; ++k) e += f[k] * f[k];
      washer_worst = std::max(washer_worst, e / (f[0] * f[0]));
    }
  }
  const bool pass = nut_ok >= 48 && cube_ok >= 48 && washer_worst <= 0.02;
  return {pass, "nut " + std::to_string(nut_ok) + "/50, cube " + std::to_string(cube_ok) + "/50 (>= 95%), washer k>=1 " +
                    fmt("%.4f", washer_worst) + " of k=0 (<= 0.02)"};
}

struct Profile {
  std::size_t cnn_epochs_low = 20;
  std::size_t cnn_epochs_full = 20;
  std::size_t s2p_epochs = 200;
};

struct ExperimentResult {
  eval::AngleSweepReport s2p, cnn;
};

constexpr std::uint64_t kDataSeed = 1, kSplitSeed = 11, kModelSeed = 5, kTrainSeed = 9;

ExperimentResult run_experiment(bool low_data, const Profile& prof) {
  const auto ds = data::gen_dataset(20, kDataSeed);
  const auto split = low_data ? data::split_low_data(ds, 3, kSplitSeed) : data::split_stratified(ds, 0.75, kSplitSeed);
  ExperimentResult out;
  for (auto arch : {models::Architecture::S2P, models::Architecture::SimpleCNN}) {
    auto model = models::build_model(arch, 4, kModelSeed);
    models::TrainConfig cfg;
    cfg.seed = kTrainSeed;
    cfg.loss = models::TrainConfig::default_loss(arch);
    cfg.augment = low_data ? data::low_data_augment() : data::full_data_augment();
    cfg.epochs_max = arch == models::Architecture::S2P ? prof.s2p_epochs
                                                       : (low_data ? prof.cnn_epochs_low : prof.cnn_epochs_full);
    models::train(model, split.train, cfg);
    auto rep = eval::angle_sweep(model, split.test);
    std::printf("    %-3s %s:", model.name().c_str(), low_data ? "low_data" : "full_data");
    for (double a : rep.accuracy_pct()) std::printf(" %s", eval::format_pct(a).c_str());
    std::printf("\n");
    std::fflush(stdout);
    (arch == models::Architecture::S2P ? out.s2p : out.cnn) = std::move(rep);
  }
  return out;
}

Outcome c7_full_data(const Profile& prof) {
  const auto r = run_experiment(false, prof);
  const double s_min = *std::min_element(r.s2p.accuracy.begin(), r.s2p.accuracy.end());
  const double c_min = *std::min_element(r.cnn.accuracy.begin(), r.cnn.accuracy.end());
  return {s_min >= 0.95 && c_min >= 0.95, "N=" + std::to_string(r.s2p.n_total) + ", worst angle s2p " +
                                              fmt("%.1f", 100 * s_min) + "%, cnn " + fmt("%.1f", 100 * c_min) +
                                              "% (>= 95%)"};
}

Outcome c8_low_data(const Profile& prof) {
  const auto r = run_experiment(true, prof);
  const auto sp = r.s2p.accuracy_pct(), cp = r.cnn.accuracy_pct();
  const auto ss = eval::summarize(sp), cs = eval::summarize(cp);
  const double c_worst = *std::min_element(cp.begin(), cp.end());
  const bool a = ss.std <= 5.0;
  const bool b = cs.std >= 2.0 * ss.std;
  const bool c = c_worst <= cp[0] - 15.0;
  const bool d = ss.mean >= cs.mean;
  std::ostringstream os;
  os << "N=" << r.s2p.n_total << "; (a) s2p std " << fmt("%.1f", ss.std) << " <= 5 " << (a ? "ok" : "NO")
     << "; (b) cnn std " << fmt("%.1f", cs.std) << " >= 2x s2p " << (b ? "ok" : "NO") << "; (c) cnn worst "
     << fmt("%.1f", c_worst) << " vs 0deg " << fmt("%.1f", cp[0]) << " (>= 15 pp drop) " << (c ? "ok" : "NO")
     << "; (d) mean s2p " << fmt("%.1f", ss.mean) << " >= cnn " << fmt("%.1f", cs.mean) << " " << (d ? "ok" : "NO");
  return {a && b && c && d, os.str()};
}

Outcome c9_summary_oracle() {
  const double s2p[] = {72.1, 73.5, 72.1, 70.6, 69.1, 70.6, 75.0, 69.1, 70.6, 70.6, 70.6, 70.6};
  const double cnn[] = {89.7, 89.7, 76.5, 64.7, 50.0, 45.6, 19.1, 27.9, 36.8, 70.6, 73.5, 76.5};
  const auto a = eval::summarize(s2p), b = eval::summarize(cnn);
  auto near = [](double v, double t) { return std::abs(v - t) <= 0.1 + 1e-9; };
  const bool ok[] = {near(a.mean, 71.2), near(a.std, 1.6), near(b.mean, 60.0), near(b.std, 22.9)};
  std::ostringstream os;
  os << "s2p mean " << fmt("%.2f", a.mean) << " (71.2) " << (ok[0] ? "ok" : "NO") << ", std " << fmt("%.2f", a.std)
     << " (1.6) " << (ok[1] ? "ok" : "NO") << "; cnn mean " << fmt("%.2f", b.mean) << " (60.0) "
     << (ok[2] ? "ok" : "NO") << ", std " << fmt("%.2f", b.std) << " (22.9) " << (ok[3] ? "ok" : "NO");
  return {ok[0] && ok[1] && ok[2] && ok[3], os.str()};
}

// Runs the CLI through the shell; returns its exit code.
int sh(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome c10_determinism(const std::string& cli, const fs::path& work) {
  const fs::path dir = work / "determinism";
  const std::string data = (dir / "data").string(), out = (dir / "out").string();
  std::vector<std::map<std::string, std::string>> runs;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(dir);
    const std::string q = "'" + cli + "'";
    const int rcs[] = {
        sh(q + " gen-data --out '" + data + "' --per-class 20 --seed 10"),
        sh(q + " train --data '" + data + "' --out '" + out + "' --model s2p --experiment low_data --seed 7 --epochs 10"),
        sh(q + " train --data '" + data + "' --out '" + out + "' --model cnn --experiment low_data --seed 7 --epochs 1 "
               "--augment-factor 4"),
        sh(q + " eval --compare '" + out + "/s2p_low_data.ckpt' '" + out + "/cnn_low_data.ckpt' --data '" + data +
           "' --out '" + out + "'"),
    };
    for (int rc : rcs) {
      if (rc != 0) return {false, "pipeline step exited " + std::to_string(rc)};
    }
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = data::read_file(e.path());
    }
    runs.push_back(std::move(files));
  }
  std::size_t differing = 0, artifacts = 0;
  for (const auto& [name, bytes] : runs[0]) {
    if (!name.starts_with("out/")) continue;
    ++artifacts;
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differing;
  }
  const bool same_set = runs[0].size() == runs[1].size();
  return {differing == 0 && same_set && artifacts >= 8,
          std::to_string(artifacts) + " artifacts (checkpoints, sweeps, comparison), " + std::to_string(differing) +
              " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cli_path, work = "acceptance_work", profile = "smoke";
  std::set<int> only;
  app.add_option("--cli", cli_path, "Path to the s2p executable")->required();
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--profile", profile, "smoke (reduced CNN epochs) or complete (200-epoch cap)")
      ->check(CLI::IsMember({"smoke", "complete"}));
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  Profile prof;
  if (profile == "complete") prof.cnn_epochs_low = prof.cnn_epochs_full = 200;
  fs::create_directories(work);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, c1_parameter_counts},
      {2, c2_exact_shifts},
      {3, c3_lattice_rotation},
      {4, c4_fft_oracle},
      {5, c5_gradients},
      {6, c6_harmonics},
      {7, [&] { return c7_full_data(prof); }},
      {8, [&] { return c8_low_data(prof); }},
      {9, c9_summary_oracle},
      {10, [&] { return c10_determinism(cli_path, work); }},
  };
  std::printf("profile %s: s2p %zu epochs, cnn %zu (low) / %zu (full) epochs\n", profile.c_str(), prof.s2p_epochs,
              prof.cnn_epochs_low, prof.cnn_epochs_full);
  int passed = 0, failed = 0, known = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto k = kKnownFailures.find(id);
    std::printf("criterion %2d: %s  %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), sec);
    if (!o.pass && k != kKnownFailures.end()) std::printf("              known failure: %s\n", k->second.c_str());
    std::fflush(stdout);
    if (o.pass) ++passed;
    else if (k != kKnownFailures.end()) ++known;
    else ++failed;
  }
  std::printf("%d passed, %d failed, %d known failure(s)\n", passed, failed, known);
  return failed == 0 ? 0 : 1;
}
