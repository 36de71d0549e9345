#pragma once

// Batch command-line front end: gen-data, preprocess, train, eval, report.
// Exit codes: 0 success, 2 usage/config/input error, 3 numeric failure.

#include <CLI11.hpp>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "s2p/data.hpp"
#include "s2p/error.hpp"
#include "s2p/eval.hpp"
#include "s2p/imaging.hpp"
#include "s2p/models.hpp"

namespace s2p::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

enum class Experiment { LowData, FullData };

inline const char* experiment_name(Experiment e) { return e == Experiment::LowData ? "low_data" : "full_data"; }

inline Experiment parse_experiment(const std::string& s) {
  if (s == "low_data") return Experiment::LowData;
  if (s == "full_data") return Experiment::FullData;
  throw ParameterError("unknown experiment '" + s + "' (expected low_data or full_data)");
}

/// Seed used when neither a flag nor a config file supplies one.
inline std::uint64_t default_seed() {
  if (const char* env = std::getenv("S2P_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ParameterError(std::string("S2P_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

/// Fully resolved settings of one training run.
struct RunConfig {
  std::string data_dir;
  std::string out_dir = ".";
  Experiment experiment = Experiment::LowData;
  models::Architecture model = models::Architecture::S2P;
  std::uint64_t seed = 0;        ///< model init and training stream
  std::uint64_t split_seed = 0;  ///< train/test partition
  std::size_t n_per_class = 3;   ///< low_data training images per class
  double train_frac = 0.75;      ///< full_data stratified split
  std::size_t epochs_max = 200;
  std::size_t batch = 16;
  std::size_t patience = 30;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  std::size_t augment_factor = 50;

  std::string stem() const { return std::string(models::architecture_name(model)) + "_" + experiment_name(experiment); }

  json to_json() const {
    json j;
    j["data"] = data_dir;
    j["out"] = out_dir;
    j["experiment"] = experiment_name(experiment);
    j["model"] = models::architecture_name(model);
    j["seed"] = seed;
    j["split_seed"] = split_seed;
    j["n_per_class"] = n_per_class;
    j["train_frac"] = train_frac;
    j["epochs_max"] = epochs_max;
    j["batch"] = batch;
    j["patience"] = patience;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["augment_factor"] = augment_factor;
    return j;
  }

  /// Overlays keys of a config file; unknown keys are rejected.
  void merge(const json& j) {
    if (!j.is_object()) throw ParameterError("config: top level must be a JSON object");
    try {
      for (const auto& [key, v] : j.items()) {
        if (key == "data") data_dir = v.get<std::string>();
        else if (key == "out") out_dir = v.get<std::string>();
        else if (key == "experiment") experiment = parse_experiment(v.get<std::string>());
        else if (key == "model") model = models::parse_architecture(v.get<std::string>());
        else if (key == "seed") seed = v.get<std::uint64_t>();
        else if (key == "split_seed") split_seed = v.get<std::uint64_t>();
        else if (key == "n_per_class") n_per_class = v.get<std::size_t>();
        else if (key == "train_frac") train_frac = v.get<double>();
        else if (key == "epochs_max") epochs_max = v.get<std::size_t>();
        else if (key == "batch") batch = v.get<std::size_t>();
        else if (key == "patience") patience = v.get<std::size_t>();
        else if (key == "lr") lr = v.get<double>();
        else if (key == "weight_decay") weight_decay = v.get<double>();
        else if (key == "augment_factor") augment_factor = v.get<std::size_t>();
        else throw ParameterError("config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ParameterError(std::string("config: ") + ex.what());
    }
  }

  models::TrainConfig train_config() const {
    models::TrainConfig t;
    t.epochs_max = epochs_max;
    t.batch = batch;
    t.patience = patience;
    t.lr = lr;
    t.weight_decay = weight_decay;
    t.augment_factor = augment_factor;
    t.loss = models::TrainConfig::default_loss(model);
    t.augment = experiment == Experiment::LowData ? data::low_data_augment() : data::full_data_augment();
    t.seed = Rng::splitmix64(seed);
    return t;
  }
};

/// The experiment's partition of `ds`.
inline data::DatasetSplit make_split(const std::vector<data::LabeledImage>& ds, Experiment e,
                                     std::uint64_t split_seed, std::size_t n_per_class, double train_frac) {
  return e == Experiment::LowData ? data::split_low_data(ds, n_per_class, split_seed)
                                  : data::split_stratified(ds, train_frac, split_seed);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  // create_directories succeeds on an existing read-only directory; probe it.
  const fs::path probe = dir / ".s2p_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const fs::path& out, std::size_t per_class, std::uint64_t seed, std::ostream& log) {
  ensure_dir(out);
  const auto ds = data::gen_dataset(per_class, seed);
  data::save_dataset(ds, out);
  json cfg;
  cfg["per_class"] = per_class;
  cfg["seed"] = seed;
  cfg["classes"] = std::vector<std::string>(data::kClassNames.begin(), data::kClassNames.end());
  write_text(out / "gen_config.json", cfg.dump(2) + "\n");
  log << "wrote " << ds.size() << " images to " << out.string() << "\n";
  return kExitOk;
}

/// Preprocesses one PGM, or every PGM below a directory (mirrored tree).
inline int cmd_preprocess(const fs::path& in, const fs::path& out, std::ostream& log) {
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::recursive_directory_iterator(in)) {
      if (e.is_regular_file() && e.path().extension() == ".pgm") {
        jobs.emplace_back(e.path(), out / fs::relative(e.path(), in));
      }
    }
    std::sort(jobs.begin(), jobs.end());
  } else if (fs::is_regular_file(in)) {
    jobs.emplace_back(in, out / in.filename());
  } else {
    throw IoError("preprocess: no such file or directory: " + in.string());
  }
  for (const auto& [src, dst] : jobs) {
    ensure_dir(dst.parent_path());
    data::save_pgm(imaging::preprocess(data::load_pgm(src)), dst);
  }
  log << "preprocessed " << jobs.size() << " image(s) into " << out.string() << "\n";
  return kExitOk;
}

inline int cmd_train(const RunConfig& rc, std::ostream& log, bool verbose) {
  if (rc.data_dir.empty()) throw ParameterError("train: --data is required");
  const fs::path out = rc.out_dir;
  ensure_dir(out);
  const auto ds = data::load_dataset(rc.data_dir);
  const auto split = make_split(ds, rc.experiment, rc.split_seed, rc.n_per_class, rc.train_frac);
  const auto tcfg = rc.train_config();
  if (rc.experiment == Experiment::LowData && tcfg.augment.rotation) {
    throw ParameterError("low_data preset must not use rotation augmentation");
  }
  if (rc.experiment == Experiment::FullData && !tcfg.augment.rotation) {
    throw ParameterError("full_data preset must use rotation augmentation");
  }
  write_text(out / (rc.stem() + "_config.json"), rc.to_json().dump(2) + "\n");

  auto model = models::build_model(rc.model, data::kNumClasses, rc.seed);
  log << "training " << model.name() << " (" << model.trainable_parameter_count() << " params) on "
      << split.train.size() << " images, " << experiment_name(rc.experiment) << "\n";
  auto ckpt = models::train(model, split.train, tcfg, [&](const models::EpochRecord& e) {
    if (verbose) log << "epoch " << e.epoch << " loss " << e.loss << " lr " << e.lr << "\n";
  });
  ckpt.run = rc.to_json();
  ckpt.run["n_train"] = split.train.size();
  ckpt.run["n_test"] = split.test.size();

  models::save_checkpoint(ckpt, out / (rc.stem() + ".ckpt"));
  json hist;
  hist["best_epoch"] = ckpt.best_epoch;
  hist["epochs_run"] = ckpt.history.size();
  auto& rows = hist["history"] = json::array();
  for (const auto& e : ckpt.history) rows.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}});
  write_text(out / (rc.stem() + "_history.json"), hist.dump(2) + "\n");
  log << "epochs run " << ckpt.history.size() << ", best epoch " << ckpt.best_epoch << ", wrote "
      << (out / (rc.stem() + ".ckpt")).string() << "\n";
  return kExitOk;
}

/// Rebuilds the checkpoint's held-out split from its recorded seeds and sweeps it.
inline eval::AngleSweepReport evaluate_checkpoint(const fs::path& ckpt_path, const fs::path& data_dir) {
  const auto ckpt = models::load_checkpoint(ckpt_path);
  auto model = models::model_from_checkpoint(ckpt);
  Experiment exp;
  std::uint64_t split_seed;
  std::size_t n_per_class;
  double train_frac;
  try {
    exp = parse_experiment(ckpt.run.at("experiment").get<std::string>());
    split_seed = ckpt.run.at("split_seed").get<std::uint64_t>();
    n_per_class = ckpt.run.value("n_per_class", std::size_t{3});
    train_frac = ckpt.run.value("train_frac", 0.75);
  } catch (const nlohmann::json::exception& ex) {
    throw ParameterError(std::string("checkpoint lacks run provenance: ") + ex.what());
  }
  std::vector<std::string> classes;
  const auto ds = data::load_dataset(data_dir, &classes);
  if (classes.size() != model.num_classes) {
    throw ShapeError("dataset has " + std::to_string(classes.size()) + " classes, checkpoint expects " +
                     std::to_string(model.num_classes));
  }
  const auto split = make_split(ds, exp, split_seed, n_per_class, train_frac);
  auto rep = eval::angle_sweep(model, split.test);
  rep.experiment = experiment_name(exp);
  return rep;
}

inline void write_sweep(const eval::AngleSweepReport& rep, const fs::path& out) {
  const std::string stem = rep.model_name + "_" + rep.experiment + "_sweep";
  eval::emit_report(rep, out / (stem + ".csv"), eval::ReportFormat::Csv);
  eval::emit_report(rep, out / (stem + ".json"), eval::ReportFormat::Json);
}

inline void print_sweep(const eval::AngleSweepReport& rep, std::ostream& log) {
  log << rep.model_name << " " << rep.experiment << " (N=" << rep.n_total << ")\n";
  const auto pct = rep.accuracy_pct();
  for (std::size_t i = 0; i < pct.size(); ++i) log << "  " << rep.angles_deg[i] << "\t" << eval::format_pct(pct[i]) << "\n";
  const auto s = eval::summarize(pct);
  log << "  mean\t" << eval::format_pct(s.mean) << "\n  std\t" << eval::format_pct(s.std) << "\n";
}

inline int cmd_eval(const std::vector<std::string>& checkpoints, const fs::path& data_dir, const fs::path& out,
                    std::ostream& log) {
  if (checkpoints.empty() || checkpoints.size() > 2) throw ParameterError("eval: give one checkpoint or --compare a b");
  ensure_dir(out);
  std::vector<eval::AngleSweepReport> reps;
  for (const auto& c : checkpoints) {
    reps.push_back(evaluate_checkpoint(c, data_dir));
    write_sweep(reps.back(), out);
    print_sweep(reps.back(), log);
  }
  if (reps.size() == 2) {
    const std::string table = eval::compare_csv(reps[0], reps[1]);
    write_text(out / ("compare_" + reps[0].model_name + "_" + reps[1].model_name + "_" + reps[0].experiment + ".csv"),
               table);
    log << table;
  }
  return kExitOk;
}

inline int cmd_report(const std::vector<std::string>& inputs, const std::optional<fs::path>& out, std::ostream& log) {
  if (inputs.empty()) throw ParameterError("report: no sweep files given");
  std::vector<eval::AngleSweepReport> reps;
  for (const auto& p : inputs) reps.push_back(eval::load_report(p));
  std::string text;
  if (reps.size() == 2) {
    text = eval::compare_csv(reps[0], reps[1]);
  } else {
    text = "model,experiment,n_total,mean_pct,std_pct,min_pct,max_pct\n";
    for (const auto& r : reps) {
      const auto pct = r.accuracy_pct();
      const auto s = eval::summarize(pct);
      text += r.model_name + "," + r.experiment + "," + std::to_string(r.n_total) + "," + eval::format_pct(s.mean) +
              "," + eval::format_pct(s.std) + "," + eval::format_pct(*std::min_element(pct.begin(), pct.end())) + "," +
              eval::format_pct(*std::max_element(pct.begin(), pct.end())) + "\n";
    }
  }
  if (out) {
    ensure_dir(out->parent_path().empty() ? fs::path(".") : out->parent_path());
    write_text(*out, text);
  }
  log << text;
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses and dispatches; never throws.
inline int run(std::vector<std::string> args, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Rotation-invariant polar-spectral classifier toolkit"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_flag;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic shape dataset as PGM files");
  std::string gen_out;
  std::size_t per_class = 20;
  gen->add_option("--out", gen_out, "Dataset root directory")->required();
  gen->add_option("--per-class", per_class, "Images per class")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed_flag, "Generator seed (default: $S2P_SEED or 0)");

  auto* pre = app.add_subcommand("preprocess", "Foreground-extract and centre-resize raw PGM frames to 128x128");
  std::string pre_in, pre_out;
  pre->add_option("--in", pre_in, "PGM file or directory")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model under one experiment preset");
  std::string config_path, tr_data, tr_out, tr_exp, tr_model;
  std::optional<std::uint64_t> split_seed;
  std::optional<std::size_t> epochs, patience, batch, augment_factor;
  bool verbose = false;
  tr->add_option("--config", config_path, "JSON config file (flags override it)");
  tr->add_option("--data", tr_data, "Dataset root directory");
  tr->add_option("--out", tr_out, "Output directory");
  tr->add_option("--experiment", tr_exp, "low_data | full_data");
  tr->add_option("--model", tr_model, "s2p | cnn");
  tr->add_option("--seed", seed_flag, "Init/training seed (default: $S2P_SEED or 0)");
  tr->add_option("--split-seed", split_seed, "Split seed (default: the seed)");
  tr->add_option("--epochs", epochs, "Maximum epochs");
  tr->add_option("--patience", patience, "Early-stopping patience in epochs");
  tr->add_option("--batch", batch, "Batch size");
  tr->add_option("--augment-factor", augment_factor, "Copies per training image per epoch");
  tr->add_flag("--verbose", verbose, "Log every epoch");

  auto* ev = app.add_subcommand("eval", "Twelve-angle rotation sweep of a checkpoint on its held-out split");
  std::string ev_ckpt, ev_data, ev_out = ".";
  std::vector<std::string> compare;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file");
  ev->add_option("--compare", compare, "Two checkpoints to compare")->expected(2);
  ev->add_option("--data", ev_data, "Dataset root directory")->required();
  ev->add_option("--out", ev_out, "Output directory");

  auto* rp = app.add_subcommand("report", "Summarise sweep JSON files (two files: joined table with delta)");
  std::vector<std::string> rp_in;
  std::string rp_out;
  rp->add_option("--in", rp_in, "Sweep JSON files")->required();
  rp->add_option("--out", rp_out, "Write the table to this file");

  std::vector<const char*> argv{"s2p"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      log << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, per_class, seed_flag.value_or(default_seed()), log);
    if (*pre) return cmd_preprocess(pre_in, pre_out, log);
    if (*tr) {
      RunConfig rc;
      bool seed_from_file = false, split_from_file = false;
      if (!config_path.empty()) {
        json j;
        try {
          j = json::parse(data::read_file(config_path));
        } catch (const nlohmann::json::parse_error& ex) {
          throw ParameterError(std::string("config: ") + ex.what());
        }
        rc.merge(j);
        seed_from_file = j.contains("seed");
        split_from_file = j.contains("split_seed");
      }
      if (!tr_data.empty()) rc.data_dir = tr_data;
      if (!tr_out.empty()) rc.out_dir = tr_out;
      if (!tr_exp.empty()) rc.experiment = parse_experiment(tr_exp);
      if (!tr_model.empty()) rc.model = models::parse_architecture(tr_model);
      if (seed_flag) rc.seed = *seed_flag;
      else if (!seed_from_file) rc.seed = default_seed();
      if (split_seed) rc.split_seed = *split_seed;
      else if (!split_from_file) rc.split_seed = rc.seed;
      if (epochs) rc.epochs_max = *epochs;
      if (patience) rc.patience = *patience;
      if (batch) rc.batch = *batch;
      if (augment_factor) rc.augment_factor = *augment_factor;
      return cmd_train(rc, log, verbose);
    }
    if (*ev) {
      std::vector<std::string> ckpts = compare;
      if (!ev_ckpt.empty()) ckpts.insert(ckpts.begin(), ev_ckpt);
      return cmd_eval(ckpts, ev_data, ev_out, log);
    }
    if (*rp) {
      std::optional<fs::path> out;
      if (!rp_out.empty()) out = rp_out;
      return cmd_report(rp_in, out, log);
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace s2p::cli
