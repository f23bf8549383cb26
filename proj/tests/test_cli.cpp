#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metatune/cli/commands.hpp"

using namespace metatune;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "metatune");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Manifest without the wall-clock fields.
std::map<std::string, std::string> stable_manifest(const fs::path& dir) {
  auto kv = read_key_values(dir / cli::kRunManifest);
  kv.erase("started_at");
  kv.erase("finished_at");
  kv.erase("wall_seconds");
  return kv;
}

// Small datasets and a briefly pretrained net shared by the whole suite.
class CliTest : public ::testing::Test {
 protected:
  static inline fs::path root;

  static std::vector<std::string> small_gen() {
    return {"--patients", "10", "--image-size", "32", "--slices", "6", "--seed", "3"};
  }

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("metatune_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    auto gen = [](const std::string& domain, const std::string& dir) {
      std::vector<std::string> a{"gen-data", "--out", (root / dir).string(), "--domain", domain};
      for (const auto& s : small_gen()) a.push_back(s);
      const Result r = run_cli(a);
      ASSERT_EQ(r.code, 0) << r.err;
    };
    gen("source", "src");
    gen("target", "tgt");
    const Result r = run_cli({"pretrain", "--data", (root / "src").string(), "--out", (root / "pre").string(),
                              "--epochs", "2", "--width", "4", "--lr", "0.05"});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::vector<std::string> finetune_args(const std::string& out, const std::string& method) {
    return {"finetune", "--params", (root / "pre" / "params.mtp").string(), "--source", (root / "src").string(),
            "--target", (root / "tgt").string(), "--out", (root / out).string(), "--method", method,
            "--meta-steps", "2"};
  }
};

TEST_F(CliTest, GenDataWritesDatasetAndConfig) {
  EXPECT_TRUE(fs::exists(root / "tgt" / "dataset.txt"));
  const auto kv = read_key_values(root / "tgt" / "gen_config.txt");
  EXPECT_EQ(kv.at("domain"), "target");
  EXPECT_EQ(kv.at("patients"), "10");
  EXPECT_EQ(kv.at("image_size"), "32");
  EXPECT_EQ(kv.at("skull"), "true");
  EXPECT_EQ(load_split(root / "tgt", Split::train).size(), 8u);
  EXPECT_EQ(load_split(root / "tgt", Split::val).size(), 2u);
}

TEST_F(CliTest, GenDataIsReproducible) {
  std::vector<std::string> a{"gen-data", "--out", (root / "tgt_again").string()};
  for (const auto& s : small_gen()) a.push_back(s);
  ASSERT_EQ(run_cli(a).code, 0);
  EXPECT_EQ(cli::hash_dataset(root / "tgt"), cli::hash_dataset(root / "tgt_again"));

  a[2] = (root / "tgt_other").string();
  a.back() = "4";
  ASSERT_EQ(run_cli(a).code, 0);
  EXPECT_NE(cli::hash_dataset(root / "tgt"), cli::hash_dataset(root / "tgt_other"));
}

TEST_F(CliTest, GenDataDomainsDiffer) {
  EXPECT_NE(cli::hash_dataset(root / "src"), cli::hash_dataset(root / "tgt"));
  EXPECT_EQ(load_split(root / "src", Split::train).front().domain, Domain::source);
}

TEST_F(CliTest, PretrainOutputs) {
  const fs::path pre = root / "pre";
  const ParamVector p = read_params(pre / "params.mtp");
  EXPECT_EQ(p.config.base_width, 4u);
  EXPECT_EQ(p.config.image_size, 32u);
  const std::string csv = slurp(pre / "pretrain.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,source_val_dsc");
  EXPECT_EQ(count_lines(csv), 4u);  // header, epochs 0..2
  const auto kv = read_key_values(pre / cli::kRunManifest);
  EXPECT_EQ(kv.at("status"), "complete");
  EXPECT_EQ(kv.at("data_hash"), cli::hash_dataset(root / "src"));
}

TEST_F(CliTest, FinetuneIsDeterministic) {
  auto a = finetune_args("ft_a", "active");
  a.push_back("--order-log");
  a.push_back((root / "order_a.csv").string());
  auto b = a;
  b[8] = (root / "ft_b").string();
  b.back() = (root / "order_b.csv").string();
  const Result ra = run_cli(a), rb = run_cli(b);
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(rb.code, 0) << rb.err;
  EXPECT_EQ(slurp(root / "ft_a" / "tuned.mtp"), slurp(root / "ft_b" / "tuned.mtp"));
  EXPECT_EQ(slurp(root / "ft_a" / "trajectory.csv"), slurp(root / "ft_b" / "trajectory.csv"));
  EXPECT_EQ(slurp(root / "order_a.csv"), slurp(root / "order_b.csv"));

  auto ma = stable_manifest(root / "ft_a"), mb = stable_manifest(root / "ft_b");
  for (const char* k : {"command_line", "outputs", "run_id"}) {
    ma.erase(k);
    mb.erase(k);
  }
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(ma.at("status"), "complete");
  EXPECT_EQ(ma.at("params_hash"), cli::hash_file(root / "pre" / "params.mtp"));
  EXPECT_EQ(count_lines(slurp(root / "ft_a" / "trajectory.csv")), 3u);
}

TEST_F(CliTest, FinetuneManifestRecordsForgetting) {
  ASSERT_EQ(run_cli(finetune_args("ft_passive", "passive")).code, 0);
  const auto kv = read_key_values(root / "ft_passive" / cli::kRunManifest);
  const double f = std::stod(kv.at("forgetting"));
  EXPECT_DOUBLE_EQ(f, std::stod(kv.at("initial_source_val_dsc")) - std::stod(kv.at("final_source_val_dsc")));
  EXPECT_EQ(kv.at("method"), "passive");
  EXPECT_EQ(kv.at("mode"), "second");
  EXPECT_NE(kv.at("command_line").find("--method passive"), std::string::npos);
}

TEST_F(CliTest, NaiveWarnsAboutExplicitBeta) {
  auto a = finetune_args("ft_naive", "naive");
  a.push_back("--beta");
  a.push_back("0.1");
  const Result r = run_cli(a);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("--beta is ignored"), std::string::npos);

  const Result quiet = run_cli(finetune_args("ft_naive2", "naive"));
  EXPECT_EQ(quiet.err.find("--beta"), std::string::npos);
}

TEST_F(CliTest, FinetuneSeedChangesOrder) {
  auto a = finetune_args("ft_s1", "passive");
  a.insert(a.end(), {"--seed", "1", "--order-log", (root / "order_s1.csv").string()});
  auto b = finetune_args("ft_s2", "passive");
  b.insert(b.end(), {"--seed", "2", "--order-log", (root / "order_s2.csv").string()});
  ASSERT_EQ(run_cli(a).code, 0);
  ASSERT_EQ(run_cli(b).code, 0);
  EXPECT_NE(slurp(root / "order_s1.csv"), slurp(root / "order_s2.csv"));
}

TEST_F(CliTest, EvalWritesCsvs) {
  const Result r = run_cli({"eval", "--params", (root / "pre" / "params.mtp").string(), "--data",
                            (root / "tgt").string(), "--split", "all", "--out", (root / "ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string dice = slurp(root / "ev" / "dice.csv");
  EXPECT_EQ(dice.substr(0, dice.find('\n')), "patient,slice,class,dsc");
  EXPECT_EQ(count_lines(dice), 1u + 10u * 6u * kNumClasses);
  const std::string summary = slurp(root / "ev" / "summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "class,mean,std,n");
  EXPECT_NE(summary.find("mean_fg,"), std::string::npos);
  EXPECT_EQ(r.out, summary);
}

TEST_F(CliTest, PerfectPredictorScoresOne) {
  const auto patients = load_split(root / "tgt", Split::val);
  const auto rows = evaluate_slices([](const Sample& s) { return s.labels; }, kNumClasses, patients);
  const AggregateReport agg = aggregate_slices(rows);
  EXPECT_DOUBLE_EQ(agg.mean_foreground.mean, 1.0);
  EXPECT_DOUBLE_EQ(agg.mean_foreground.std, 0.0);
  for (const auto& c : agg.per_class) EXPECT_DOUBLE_EQ(c.mean, 1.0);
}

TEST_F(CliTest, ReportSkipsIncompleteRuns) {
  const fs::path runs = root / "runs";
  fs::create_directories(runs);
  ASSERT_EQ(run_cli(finetune_args("runs/active_seed0", "active")).code, 0);
  ASSERT_EQ(run_cli(finetune_args("runs/naive_seed0", "naive")).code, 0);
  fs::create_directories(runs / "empty_dir");
  const Result r = run_cli({"report", "--runs", runs.string(), "--out", (root / "report.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("empty_dir"), std::string::npos);
  const std::string csv = slurp(root / "report.csv");
  EXPECT_EQ(csv, r.out);
  std::istringstream is(csv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 8u);
  EXPECT_EQ(lines[0], "row,method,seed,n,target_val_dsc,target_val_enhancing,source_val_dsc,forgetting");
  EXPECT_EQ(lines[1].rfind("baseline,pretrained,,2,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("run,naive,0,1,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("run,active,0,1,", 0), 0u);
  EXPECT_EQ(lines[4].rfind("mean,naive,,1,", 0), 0u);
  EXPECT_EQ(lines[7].rfind("std,active,,1,", 0), 0u);
}

TEST_F(CliTest, ReportWithNoRunsFails) {
  fs::create_directories(root / "no_runs" / "x");
  const Result r = run_cli({"report", "--runs", (root / "no_runs").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no runs found"), std::string::npos);
}

TEST_F(CliTest, SweepResultsDoNotDependOnJobs) {
  auto sweep = [](const std::string& out, const std::string& jobs) {
    return run_cli({"sweep", "--params", (root / "pre" / "params.mtp").string(), "--source",
                    (root / "src").string(), "--target", (root / "tgt").string(), "--out", (root / out).string(),
                    "--meta-steps", "1", "--seeds", "2", "--jobs", jobs, "--methods", "naive,active"});
  };
  const Result a = sweep("sweep1", "1"), b = sweep("sweep2", "2");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const std::string ra = slurp(root / "sweep1" / "report.csv");
  EXPECT_EQ(ra, slurp(root / "sweep2" / "report.csv"));
  EXPECT_EQ(count_lines(ra), 1u + 1u + 4u + 4u);
  for (const char* run : {"naive_seed0", "naive_seed1", "active_seed0", "active_seed1"}) {
    EXPECT_EQ(slurp(root / "sweep1" / run / "tuned.mtp"), slurp(root / "sweep2" / run / "tuned.mtp")) << run;
  }
}

TEST_F(CliTest, ConfigFileSuppliesDefaults) {
  const fs::path cfg = root / "ft.cfg";
  {
    std::ofstream os(cfg);
    os << "# defaults\nmethod=passive\nmeta-steps=1\nseed=5\n";
  }
  auto a = finetune_args("ft_cfg", "active");  // explicit --method and --meta-steps win
  a.insert(a.end(), {"--config", cfg.string()});
  const Result r = run_cli(a);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = read_key_values(root / "ft_cfg" / cli::kRunManifest);
  EXPECT_EQ(kv.at("method"), "active");
  EXPECT_EQ(kv.at("meta_steps"), "2");
  EXPECT_EQ(kv.at("seed"), "5");
}

TEST_F(CliTest, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"eval", "--data", "x"}).code, 2);

  auto tau = finetune_args("ft_bad", "active");
  tau.insert(tau.end(), {"--tau", "1.5"});
  const Result r = run_cli(tau);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--tau"), std::string::npos);

  EXPECT_EQ(run_cli(finetune_args("ft_bad", "random")).code, 2);
  auto ratio = finetune_args("ft_bad", "active");
  ratio.insert(ratio.end(), {"--split-ratio", "1"});
  const Result rr = run_cli(ratio);
  EXPECT_EQ(rr.code, 2);
  EXPECT_NE(rr.err.find("split_ratio"), std::string::npos) << rr.err;
  auto mode = finetune_args("ft_bad", "active");
  mode.insert(mode.end(), {"--mode", "third"});
  EXPECT_EQ(run_cli(mode).code, 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", (root / "g").string(), "--domain", "lung"}).code, 2);
  EXPECT_EQ(run_cli({"gen-data", "--out", (root / "g").string(), "--noise-sigma", "-1"}).code, 2);
  EXPECT_EQ(run_cli({"report", "--runs", "x", "--config", (root / "missing.cfg").string()}).code, 2);
  EXPECT_FALSE(fs::exists(root / "ft_bad"));
}

TEST_F(CliTest, HelpExitsZero) {
  const Result r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* cmd : {"gen-data", "pretrain", "finetune", "eval", "report", "sweep"}) {
    EXPECT_NE(r.out.find(cmd), std::string::npos) << cmd;
  }
}

TEST_F(CliTest, RuntimeErrorsExitWithOne) {
  const Result r = run_cli({"eval", "--params", (root / "nope.mtp").string(), "--data", (root / "tgt").string(),
                            "--out", (root / "ev2").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope.mtp"), std::string::npos);

  const Result small = run_cli({"pretrain", "--data", (root / "missing").string(), "--out", (root / "p2").string()});
  EXPECT_EQ(small.code, 1);
}

TEST_F(CliTest, IncompatibleImageSizeIsRejected) {
  ASSERT_EQ(run_cli({"gen-data", "--out", (root / "big").string(), "--patients", "5", "--image-size", "48",
                     "--slices", "2"})
                .code,
            0);
  const Result r = run_cli({"eval", "--params", (root / "pre" / "params.mtp").string(), "--data",
                            (root / "big").string(), "--out", (root / "ev3").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("shape"), std::string::npos) << r.err;
}

}  // namespace
