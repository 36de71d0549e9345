#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "s2p/cli.hpp"

using namespace s2p;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("s2p_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"gen-data"}).code, 2);
  EXPECT_EQ(run({"gen-data", "--out", "x", "--per-class", "-3"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, UnwritableOutputExitsTwo) {
  const auto r = run({"gen-data", "--out", "/dev/null/sub", "--per-class", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, GenDataWritesTreeAndConfig) {
  const auto dir = fresh("gen");
  ASSERT_EQ(run({"gen-data", "--out", dir.string(), "--per-class", "2", "--seed", "4"}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "mutter" / "1.pgm"));
  EXPECT_TRUE(fs::exists(dir / "gen_config.json"));
  EXPECT_EQ(data::load_dataset(dir).size(), 8u);
}

TEST(Cli, PreprocessFileAndBlankFrame) {
  const auto dir = fresh("pre");
  fs::create_directories(dir);
  imaging::Image frame(40, 60, 0.1);
  for (std::size_t y = 10; y < 30; ++y)
    for (std::size_t x = 20; x < 35; ++x) frame(y, x) = 0.9;
  data::save_pgm(frame, dir / "f.pgm");
  ASSERT_EQ(run({"preprocess", "--in", (dir / "f.pgm").string(), "--out", (dir / "o").string()}).code, 0);
  const auto out = data::load_pgm(dir / "o" / "f.pgm");
  EXPECT_EQ(out.height(), 128u);
  data::save_pgm(imaging::Image(10, 10, 0.5), dir / "blank.pgm");
  EXPECT_EQ(run({"preprocess", "--in", (dir / "blank.pgm").string(), "--out", (dir / "o").string()}).code, 2);
}

TEST(Cli, ConfigValidation) {
  const auto dir = fresh("cfg");
  fs::create_directories(dir);
  cli::write_text(dir / "bad.json", R"({"epochs_max": 3, "colour": "red"})");
  auto r = run({"train", "--config", (dir / "bad.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
  cli::write_text(dir / "typed.json", R"({"epochs_max": "three"})");
  EXPECT_EQ(run({"train", "--config", (dir / "typed.json").string()}).code, 2);
  cli::write_text(dir / "broken.json", "{");
  EXPECT_EQ(run({"train", "--config", (dir / "broken.json").string()}).code, 2);
  EXPECT_EQ(run({"train", "--data", dir.string(), "--experiment", "mid_data"}).code, 2);
}

TEST(Cli, TrainEvalReportPipeline) {
  const auto dir = fresh("pipe");
  const auto ds = (dir / "ds").string(), out = (dir / "out").string();
  ASSERT_EQ(run({"gen-data", "--out", ds, "--per-class", "5", "--seed", "1"}).code, 0);
  cli::write_text(dir / "cfg.json", R"({"epochs_max": 2, "augment_factor": 2, "model": "s2p"})");
  const auto tr = run({"train", "--config", (dir / "cfg.json").string(), "--data", ds, "--out", out, "--seed", "3",
                       "--experiment", "low_data"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(fs::path(out) / "s2p_low_data.ckpt"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "s2p_low_data_history.json"));
  const auto cfg = nlohmann::json::parse(data::read_file(fs::path(out) / "s2p_low_data_config.json"));
  EXPECT_EQ(cfg["epochs_max"], 2);
  EXPECT_EQ(cfg["seed"], 3);
  EXPECT_EQ(cfg["split_seed"], 3);

  const auto ev = run({"eval", "--checkpoint", out + "/s2p_low_data.ckpt", "--data", ds, "--out", out});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto rep = eval::load_report(fs::path(out) / "s2p_low_data_sweep.json");
  EXPECT_EQ(rep.n_total, 8u);
  EXPECT_EQ(rep.experiment, "low_data");

  const auto cmp = run({"eval", "--compare", out + "/s2p_low_data.ckpt", out + "/s2p_low_data.ckpt", "--data", ds,
                        "--out", out});
  ASSERT_EQ(cmp.code, 0) << cmp.err;
  EXPECT_NE(cmp.out.find("delta_pp"), std::string::npos);

  const auto rp = run({"report", "--in", out + "/s2p_low_data_sweep.json"});
  ASSERT_EQ(rp.code, 0) << rp.err;
  EXPECT_NE(rp.out.find("s2p,low_data,8,"), std::string::npos);
}

TEST(Cli, EvalClassMismatchExitsTwo) {
  const auto dir = fresh("mismatch");
  const auto ds = (dir / "ds").string(), out = (dir / "out").string();
  ASSERT_EQ(run({"gen-data", "--out", ds, "--per-class", "4"}).code, 0);
  ASSERT_EQ(run({"train", "--data", ds, "--out", out, "--epochs", "1", "--augment-factor", "1"}).code, 0);
  fs::remove_all(fs::path(ds) / "wuerfel");
  EXPECT_EQ(run({"eval", "--checkpoint", out + "/s2p_low_data.ckpt", "--data", ds, "--out", out}).code, 2);
  EXPECT_EQ(run({"eval", "--checkpoint", out + "/missing.ckpt", "--data", ds}).code, 2);
}

TEST(Cli, DivergentTrainingExitsThree) {
  const auto dir = fresh("nan");
  const auto ds = (dir / "ds").string();
  ASSERT_EQ(run({"gen-data", "--out", ds, "--per-class", "4"}).code, 0);
  cli::write_text(dir / "cfg.json", R"({"lr": 1e38, "epochs_max": 5, "augment_factor": 2})");
  const auto r = run({"train", "--config", (dir / "cfg.json").string(), "--data", ds, "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, SeedFallsBackToEnvironment) {
  ::setenv("S2P_SEED", "42", 1);
  EXPECT_EQ(cli::default_seed(), 42u);
  ::setenv("S2P_SEED", "abc", 1);
  EXPECT_THROW(cli::default_seed(), ParameterError);
  ::unsetenv("S2P_SEED");
  EXPECT_EQ(cli::default_seed(), 0u);
}
