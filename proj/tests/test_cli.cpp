#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "config.hpp"
#include "daregram/error.hpp"
#include "test_util.hpp"

using namespace daregram;
using namespace daregram::cli;
using daregram::testing::temp_dir;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

/// A small but complete config so commands run quickly.
std::filesystem::path small_config(const std::filesystem::path& dir) {
  nlohmann::json j = nlohmann::json::parse(default_config_json());
  j["train"]["iterations"] = 30;
  j["data"]["n_source"] = 200;
  j["data"]["n_target"] = 200;
  j["output"]["dir"] = (dir / "out").string();
  const auto path = dir / "small.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

}  // namespace

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  const auto shipped = nlohmann::json::parse(read_file(std::filesystem::path(DAREGRAM_SOURCE_DIR) /
                                                       "configs" / "default.json"));
  EXPECT_EQ(shipped, nlohmann::json::parse(default_config_json()));
}

TEST(Config, MissingKeysAreDefaultedWithNotice) {
  const auto dir = temp_dir("cli_defaults");
  std::ofstream(dir / "partial.json") << R"({"train": {"iterations": 7}})";
  std::ostringstream notices;
  const CliConfig c = load_config(dir / "partial.json", {}, notices);
  EXPECT_EQ(c.train.iterations, 7);
  EXPECT_EQ(c.train.batch_size, 36);
  EXPECT_NE(notices.str().find("batch_size"), std::string::npos);
  EXPECT_EQ(notices.str().find("iterations"), std::string::npos);
}

TEST(Config, UnknownKeysRejected) {
  const auto dir = temp_dir("cli_unknown");
  std::ofstream(dir / "a.json") << R"({"train": {"iteratoins": 7}})";
  std::ofstream(dir / "b.json") << R"({"extra": {}})";
  std::ostringstream n;
  try {
    load_config(dir / "a.json", {}, n);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("iteratoins"), std::string::npos);
  }
  EXPECT_THROW(load_config(dir / "b.json", {}, n), ConfigError);
  EXPECT_THROW(load_config(std::nullopt, {{"train.bogus", "1"}}, n), ConfigError);
}

TEST(Config, OverridesTakePrecedence) {
  const auto dir = temp_dir("cli_override");
  std::ofstream(dir / "c.json") << R"({"train": {"method": "daregram", "lr0": 0.5}})";
  std::ostringstream n;
  const auto ov = parse_override_tokens({"--train.method", "source_only", "--threshold_T=0.7",
                                         "--widths", "4,3"});
  const CliConfig c = load_config(dir / "c.json", ov, n);
  EXPECT_EQ(c.train.method, Method::source_only);
  EXPECT_EQ(c.train.lr0, 0.5);
  EXPECT_EQ(c.train.alignment.threshold_T, 0.7);
  EXPECT_EQ(c.train.model.widths, (std::vector<Index>{4, 3}));
}

TEST(Config, TypeAndRangeErrorsNameTheKey) {
  std::ostringstream n;
  const auto expect_message = [&](const Override& o, const std::string& needle) {
    try {
      load_config(std::nullopt, {o}, n);
      ADD_FAILURE() << o.first;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_message({"train.batch_size", "-4"}, "batch_size");
  expect_message({"train.batch_size", "abc"}, "batch_size");
  expect_message({"alignment.threshold_T", "1.5"}, "T");
  expect_message({"seed", "1"}, "--train.seed");
  expect_message({"train.method", "dann"}, "method");
}

TEST(Cli, TrainWritesReports) {
  const auto dir = temp_dir("cli_train");
  const CliRun r = run({"train", "--config", small_config(dir).string(), "--method", "source_only"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "domain,output,mae");
  EXPECT_NE(r.out.find("target,sum,"), std::string::npos);
  const auto summary = nlohmann::json::parse(read_file(dir / "out" / "summary.json"));
  EXPECT_EQ(summary["method"], "source_only");
  EXPECT_EQ(summary["iterations_logged"], 30);
  const std::string log = read_file(dir / "out" / "run_log.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 31);
  EXPECT_EQ(load_checkpoint(dir / "out" / "model.ckpt").input_dim(), kBenchmarkDim);
}

TEST(Cli, TrainIsByteDeterministic) {
  const auto dir = temp_dir("cli_det");
  const auto cfg = small_config(dir);
  ASSERT_EQ(run({"train", "--config", cfg.string()}).code, 0);
  const std::string first = read_file(dir / "out" / "run_log.csv");
  ASSERT_EQ(run({"train", "--config", cfg.string()}).code, 0);
  EXPECT_EQ(first, read_file(dir / "out" / "run_log.csv"));
}

TEST(Cli, TrainFromCsvDomains) {
  const auto dir = temp_dir("cli_csv");
  const RegressionTask t = gen_regression_task(100, 100, kBenchmarkDim, benchmark_shift_spec());
  save_domain(t.source, dir / "s.csv");
  save_domain(t.target, dir / "t.csv");
  const CliRun r = run({"train", "--config", small_config(dir).string(), "--source_csv",
                     (dir / "s.csv").string(), "--target_csv", (dir / "t.csv").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  std::ofstream(dir / "bad.csv") << "f0,y0\n1\n";
  const CliRun bad = run({"train", "--config", small_config(dir).string(), "--source_csv",
                       (dir / "bad.csv").string(), "--target_csv", (dir / "t.csv").string()});
  EXPECT_EQ(bad.code, kExitIo);
  EXPECT_NE(bad.err.find("line 2"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitOne) {
  const auto dir = temp_dir("cli_errors");
  const auto cfg = small_config(dir).string();
  EXPECT_EQ(run({"train", "--config", cfg, "--batch_size", "-4"}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--config", (dir / "missing.json").string()}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--config", cfg, "--no_such_key", "1"}).code, kExitConfig);
  EXPECT_EQ(run({"bogus"}).code, kExitConfig);
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"sweep", "--config", cfg, "--axis", "batch_size", "--values", ""}).code,
            kExitConfig);
  EXPECT_EQ(run({"sweep", "--config", cfg, "--axis", "lr", "--values", "1"}).code, kExitConfig);
  const CliRun neg = run({"sweep", "--config", cfg, "--axis", "batch_size", "--values", "8,-1"});
  EXPECT_EQ(neg.code, kExitConfig);
  EXPECT_NE(neg.err.find("batch_size"), std::string::npos);
}

TEST(Cli, UnwritableOutputExitsThree) {
  const auto dir = temp_dir("cli_io");
  std::ofstream(dir / "file") << "x";
  const CliRun r = run({"train", "--config", small_config(dir).string(), "--output.dir",
                     (dir / "file" / "sub").string()});
  EXPECT_EQ(r.code, kExitIo);
}

TEST(Cli, SweepWritesTable) {
  const auto dir = temp_dir("cli_sweep");
  const CliRun r = run({"sweep", "--config", small_config(dir).string(), "--axis", "batch_size",
                     "--values", "8,16,32,64", "--dim", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = read_file(dir / "out" / "sweep.csv");
  EXPECT_EQ(csv, r.out);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "value,target_mae,l_cos_final,l_scale_final,k_init,status");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.find("failed"), std::string::npos);
}

TEST(Cli, SweepWithFailedRunExitsTwo) {
  const auto dir = temp_dir("cli_sweep_fail");
  const CliRun r = run({"sweep", "--config", small_config(dir).string(), "--axis", "batch_size",
                     "--values", "8", "--lr0", "1e4", "--sigmoid_head", "false",
                     "--iterations", "300"});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.out.find("failed"), std::string::npos);
  EXPECT_NE(r.err.find("diverged at iteration"), std::string::npos);
}

TEST(Cli, Gradcheck) {
  const CliRun ok = run({"gradcheck", "--seed", "1", "--p", "6", "--b", "8"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(ok.out.substr(0, ok.out.find('\n')), "block,max_rel_error");
  EXPECT_NE(ok.out.find("head.weight,"), std::string::npos);

  const CliRun broken = run({"gradcheck", "--seed", "1", "--p", "6", "--b", "8",
                          "--break-backward", "tanh"});
  EXPECT_EQ(broken.code, kExitRuntime);
  EXPECT_NE(broken.err.find("gradcheck failed: block"), std::string::npos);

  EXPECT_EQ(run({"gradcheck", "--p", "6", "--b", "8", "--break-backward", "nope"}).code,
            kExitConfig);
  EXPECT_EQ(run({"gradcheck", "--p", "1"}).code, kExitConfig);
}

TEST(Cli, Fig3) {
  const auto dir = temp_dir("cli_fig3");
  const CliRun r = run({"fig3", "--out", (dir / "fig3.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("verdict,inverse-Gram mismatch > raw mismatch"), std::string::npos);
  const std::string csv = read_file(dir / "fig3.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "seed,raw_mismatch,inverse_gram_mismatch,scale_mismatch");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);

  const CliRun zero = run({"fig3", "--zero-shift", "--seeds", "3", "--out", (dir / "z.csv").string()});
  ASSERT_EQ(zero.code, 0);
  EXPECT_NE(zero.out.find("verdict,aligned"), std::string::npos);

  std::ofstream(dir / "file") << "x";
  EXPECT_EQ(run({"fig3", "--seeds", "2", "--out", (dir / "file" / "f.csv").string()}).code, kExitIo);
}
