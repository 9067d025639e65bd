#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "dicad/config.hpp"

using namespace dicad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;  // stdout and stderr
};

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string(DICAD_CLI_PATH) + " " + args + " 2>&1";
  Outcome o;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return o;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) o.out.append(buf, n);
  const int st = pclose(p);
  o.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dicad_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// A pipeline small enough to run every command in a few seconds.
const char* kTiny = R"({
  "data": {"resolution": 32},
  "synthetic": {"size": 32, "n_train": 24, "n_validation": 4, "n_test_good": 4, "n_per_kind": 2},
  "unet": {"base_channels": 8, "levels": 2, "time_dim": 16},
  "train": {"epochs": 1, "batch_size": 8},
  "dic": {"k": 5},
  "adapt": {"gamma": 1, "batch_size": 8}
})";

}  // namespace

TEST(Config, DefaultsMatchPublishedConstants) {
  const auto c = RunConfig::preset("default");
  EXPECT_NO_THROW(c.validate());
  const auto s = c.schedule();
  EXPECT_EQ(s.steps(), 1000);
  EXPECT_FLOAT_EQ(s.beta(1), 0.0015f);
  EXPECT_FLOAT_EQ(s.beta(1000), 0.0195f);
  const auto d = c.dic();
  EXPECT_EQ(d.k, 20u);
  EXPECT_EQ(d.num_bins, 10);
  EXPECT_EQ(d.t_max, 80);
  EXPECT_EQ(d.min_bin, 2);
  EXPECT_EQ(d.round_multiple, 10);
  const auto r = c.reconstruction();
  EXPECT_EQ(r.sampling_steps, 10);
  EXPECT_EQ(r.guidance.eta, 8.0f);
  EXPECT_EQ(r.guidance.sigma, 0.0f);
  EXPECT_EQ(r.omega, 0.0f);
  const auto m = c.map();
  EXPECT_FLOAT_EQ(m.lambda, 0.85f);
  EXPECT_EQ(m.smoothing_sigma, 4.0);
  const auto t = c.train();
  EXPECT_EQ(t.epochs, 300);
  EXPECT_EQ(t.learning_rate, 1e-4);
  EXPECT_EQ(t.weight_decay, 0.01);
  EXPECT_NO_THROW(RunConfig::preset("toy").validate());
  EXPECT_THROW(RunConfig::preset("huge"), ConfigError);
}

TEST(Config, OverridesAndTypes) {
  auto c = RunConfig::preset("default");
  c.set("sampler.eta=0");
  c.set("dic.rounding_order=round_then_floor");
  c.set("map.blocks=[1,2]");
  EXPECT_EQ(c.reconstruction().guidance.eta, 0.0f);
  EXPECT_EQ(c.dic().order, RoundingOrder::round_then_floor);
  EXPECT_EQ(c.map().blocks, (std::vector<int>{1, 2}));
  EXPECT_THROW(c.set("sampler.etaa=1"), ConfigError);
  EXPECT_THROW(c.set("sampler.eta=fast"), ConfigError);
  EXPECT_THROW(c.set("sampler=3"), ConfigError);
  EXPECT_THROW(c.set("no_equals"), ConfigError);
  EXPECT_THROW(c.merge(nlohmann::json{{"dic", {{"bogus", 1}}}}), ConfigError);
}

TEST(Config, RejectsInconsistentCombinations) {
  const std::vector<std::string> bad{
      "dic.min_bin=11",        "dic.min_bin=0",        "dic.t_max=1001",     "dic.t_max=0",
      "dic.block=5",           "map.blocks=[0]",       "map.blocks=[]",      "sampler.steps=0",
      "sampler.omega=1.5",     "map.lambda=-0.1",      "map.sigma=-1",       "adapt.gamma=-1",
      "eval.pro_fpr_limit=0",  "codec.kind=\"vae\"",   "data.resolution=100", "schedule.beta_end=0.001",
      "dic.rounding_order=sideways", "map.normalization=zscore", "run.workers=0", "train.epochs=0"};
  for (const auto& o : bad) {
    auto c = RunConfig::preset("default");
    c.set(o);
    EXPECT_THROW(c.validate(), ConfigError) << o;
  }
}

TEST(Config, SnapshotRoundTrip) {
  const auto dir = fresh("snapshot");
  auto c = RunConfig::preset("toy");
  c.set("seed=17");
  c.save(dir / "config.json");
  const auto back = RunConfig::load(dir / "config.json");
  EXPECT_EQ(back.json(), c.json());
  EXPECT_EQ(back.seed(), 17u);
  std::ofstream(dir / "broken.json") << "{ nope";
  EXPECT_THROW(RunConfig::load(dir / "broken.json"), ConfigError);
}

TEST(Cli, MissingArtifactNamesPath) {
  const auto dir = fresh("missing");
  const auto o = run_cli("infer --preset toy -q --run-dir " + dir.string());
  EXPECT_EQ(o.code, 3) << o.out;
  EXPECT_NE(o.out.find("error:missing-artifact:"), std::string::npos) << o.out;
  EXPECT_NE(o.out.find((dir / "denoiser.ckpt").string()), std::string::npos) << o.out;
}

TEST(Cli, ConfigErrorIsOneLine) {
  const auto dir = fresh("badcfg");
  const auto o = run_cli("train --preset toy -q --run-dir " + dir.string() + " --set dic.min_bin=12");
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(o.out.rfind("error:config:", 0), 0u) << o.out;
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 1);
  EXPECT_FALSE(fs::exists(dir / "denoiser.ckpt"));

  const auto u = run_cli("ablate --preset toy -q --run-dir " + dir.string() + " --mode sideways");
  EXPECT_NE(u.code, 0);
  EXPECT_NE(u.out.find("error:usage:"), std::string::npos);
}

TEST(Cli, TinyPipelineEndToEnd) {
  const auto dir = fresh("tiny");
  std::ofstream(dir / "tiny.json") << kTiny;
  const std::string common = " --preset toy -q --run-dir " + (dir / "run").string() + " -c " + (dir / "tiny.json").string();
  for (const char* cmd : {"train-codec", "train", "init-backbone", "build-index", "finetune", "evaluate"}) {
    const auto o = run_cli(std::string(cmd) + common);
    ASSERT_EQ(o.code, 0) << cmd << ": " << o.out;
  }
  const auto run = dir / "run";
  for (const char* f : {"config.json", "denoiser.ckpt", "backbone.ckpt", "backbone_adapted.ckpt", "index.bin",
                        "index_adapted.bin", "report.jsonl", "report.txt", "results.jsonl"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_TRUE(fs::exists(run / "maps"));
  const std::string first = slurp(run / "report.jsonl");

  // Re-running from the snapshot alone reproduces the report.
  const auto again = run_cli("evaluate -q --run-dir " + run.string());
  ASSERT_EQ(again.code, 0) << again.out;
  EXPECT_EQ(slurp(run / "report.jsonl"), first);

  const auto inf = run_cli("infer -q --run-dir " + run.string());
  EXPECT_EQ(inf.code, 0) << inf.out;

  const auto ab = run_cli("ablate -q --run-dir " + run.string() + " --mode omega --values 0,1");
  ASSERT_EQ(ab.code, 0) << ab.out;
  const std::string table = slurp(run / "ablation_omega.txt");
  EXPECT_NE(table.find("I-AUROC"), std::string::npos) << table;

  const auto bn = run_cli("bench -q --run-dir " + run.string() + " --batch 3");
  ASSERT_EQ(bn.code, 0) << bn.out;
  const auto j = nlohmann::json::parse(slurp(run / "bench.json"));
  EXPECT_EQ(j.at("batch"), 3);
  EXPECT_TRUE(j.contains("fps"));
  EXPECT_TRUE(j.contains("seconds_per_image"));
}
