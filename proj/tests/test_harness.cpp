#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "gadk/harness.hpp"
#include "oracles.hpp"

using namespace gadk;
using namespace gadk::harness;
using oracle::code_of;

namespace {

fs::path tmp(const std::string& name) {
  const auto p = fs::path(GADK_TEST_TMP) / "harness" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json small_synthetic() {
  return json{{"n_regular", 40}, {"n_anomalous", 6}, {"points_per_group", 16}, {"mean_low", 0.0}, {"mean_high", 1.0}};
}

json config_for(const std::string& method) {
  json j{{"method", method}, {"seed", 3}, {"dataset", {{"synthetic", small_synthetic()}}}};
  if (method == "vae" || method == "aae") {
    j["params"] = {{"latent_size", 4}, {"encoder_hidden", {16}}, {"decoder_hidden", {16}},
                   {"discriminator_hidden", {8}}, {"epochs", 3}, {"minibatch_size", 8}};
  } else if (method == "mgm") {
    j["params"] = {{"max_iter", 20}, {"restarts", 1}};
  } else if (method == "ocsmm") {
    j["params"] = {{"max_points_per_group", 8}};
  } else {
    j["params"] = {{"k", 4}};
  }
  return j;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(GADK_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

}  // namespace

TEST(Config, ParsesDefaultsAndEcho) {
  const auto cfg = parse_config(config_for("mgm"));
  EXPECT_EQ(cfg.method, Method::Mgm);
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.mgm.seed, 3u);
  EXPECT_EQ(cfg.mgm.components, 3u);
  EXPECT_EQ(cfg.mgm.max_iter, 20u);
  ASSERT_TRUE(cfg.dataset.synthetic);
  EXPECT_EQ(cfg.dataset.synthetic->seed, 3u);
  EXPECT_TRUE(cfg.dataset.shuffle);
  EXPECT_EQ(cfg.echo.at("method"), "mgm");
  // The echo is itself a valid config that parses to the same thing.
  EXPECT_EQ(parse_config(cfg.echo).echo, cfg.echo);
}

TEST(Config, Errors) {
  auto j = config_for("mgm");
  j["bogus"] = 1;
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
  j = config_for("mgm");
  j["method"] = "knn";
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
  j = config_for("mgm");
  j["params"]["latent_size"] = 3;
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
  j = config_for("ocsvm");
  j["params"]["nu"] = 1.5;
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
  j = config_for("mgm");
  j["dataset"] = {{"synthetic", small_synthetic()}, {"path", "x.csv"}};
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
  j = config_for("mgm");
  j["dataset"]["synthetic"]["var"] = -1.0;
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
  j = config_for("mgm");
  j["params"]["max_iter"] = "many";
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
  j = config_for("vae");
  j["params"]["distance"] = "cosine";
  EXPECT_EQ(code_of([&] { parse_config(j); }), Errc::ConfigError);
}

TEST(Config, WithSeedChangesEverySeed) {
  const auto cfg = with_seed(parse_config(config_for("vae")), 11);
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.train.seed, 11u);
  EXPECT_EQ(cfg.dataset.synthetic->seed, 11u);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const auto dir = tmp("relpath");
  GroupDataset ds;
  ds.groups = {Group{Matrix::Ones(3, 2)}, Group{Matrix::Zero(3, 2)}};
  save_groups((dir / "d.csv").string(), ds, DataFormat::CsvLong);
  json j{{"method", "mgm"}, {"dataset", {{"path", "d.csv"}}}};
  write_text(dir / "c.json", j.dump());
  const auto cfg = load_config((dir / "c.json").string());
  EXPECT_EQ(fs::path(cfg.dataset.path), dir / "d.csv");
  EXPECT_FALSE(cfg.dataset.shuffle);
}

class EveryMethod : public ::testing::TestWithParam<std::string> {};

TEST_P(EveryMethod, RunWritesArtifactsAndIsReproducible) {
  const auto dir = tmp("run_" + GetParam());
  auto cfg = parse_config(config_for(GetParam()));
  cfg.output = (dir / "a").string();
  const auto a = run(cfg);
  cfg.output = (dir / "b").string();
  const auto b = run(cfg);
  EXPECT_TRUE(same_results(a, b));
  EXPECT_EQ(slurp(dir / "a" / "scores.csv"), slurp(dir / "b" / "scores.csv"));
  ASSERT_TRUE(a.auroc && a.auprc);
  EXPECT_GE(*a.auroc, 0.0);
  EXPECT_LE(*a.auroc, 1.0);
  EXPECT_TRUE(fs::exists(dir / "a" / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "a" / "model.gadt"));
  const auto report = json::parse(slurp(dir / "a" / "report.json"));
  EXPECT_EQ(report.at("method"), GetParam());
  EXPECT_EQ(report.at("n_groups"), 46);
  // Metrics from the written file equal the in-memory ones.
  const auto ls = read_scores_csv((dir / "a" / "scores.csv").string());
  EXPECT_EQ(auroc(ls), *a.auroc);
  EXPECT_EQ(auprc(ls), *a.auprc);
}

INSTANTIATE_TEST_SUITE_P(Methods, EveryMethod, ::testing::Values("vae", "aae", "mgm", "ocsmm", "ocsvm"));

TEST(Run, SeedChangesResults) {
  const auto cfg = parse_config(config_for("mgm"));
  EXPECT_FALSE(same_results(run(cfg), run(with_seed(cfg, 4))));
}

TEST(Run, ScoresUnseenDataset) {
  const auto dir = tmp("unseen");
  SyntheticConfig s;
  s.n_regular = 10;
  s.n_anomalous = 3;
  s.points_per_group = 16;
  s.seed = 99;
  save_groups((dir / "unseen.csv").string(), generate(s), DataFormat::CsvLong);
  for (const std::string m : {"mgm", "ocsvm", "ocsmm", "vae"}) {
    auto j = config_for(m);
    j["score_dataset"] = {{"path", (dir / "unseen.csv").string()}};
    const auto rep = run(parse_config(j));
    EXPECT_EQ(rep.scores.size(), 13u) << m;
    EXPECT_TRUE(rep.auroc) << m;
  }
}

TEST(Run, UnlabeledDataNeedsExplicitNu) {
  const auto dir = tmp("nolabels");
  SyntheticConfig s;
  s.n_regular = 20;
  s.n_anomalous = 2;
  s.points_per_group = 8;
  save_groups((dir / "d.csv").string(), generate(s).unlabeled(), DataFormat::CsvLong);
  auto j = config_for("ocsvm");
  j["dataset"] = {{"path", (dir / "d.csv").string()}};
  EXPECT_EQ(code_of([&] { run(parse_config(j)); }), Errc::ConfigError);
  j["params"]["nu"] = 0.1;
  const auto rep = run(parse_config(j));
  EXPECT_FALSE(rep.auroc);
  EXPECT_EQ(rep.scores.size(), 22u);
}

TEST(Suite, TableMatchesScoreFiles) {
  const auto dir = tmp("suite");
  std::vector<ExperimentConfig> cfgs;
  std::vector<std::string> names;
  for (const std::string m : {"mgm", "ocsvm"}) {
    for (const std::string label : {"small", "other"}) {
      auto j = config_for(m);
      j["dataset_label"] = label;
      if (label == "other") j["dataset"]["synthetic"]["n_regular"] = 30;
      cfgs.push_back(parse_config(j));
      names.push_back(m + "_" + label);
    }
  }
  const auto res = run_suite(cfgs, names, dir);
  EXPECT_EQ(res.methods, (std::vector<std::string>{"mgm", "ocsvm"}));
  EXPECT_EQ(res.dataset_labels, (std::vector<std::string>{"small", "other"}));
  std::ifstream csv(dir / "table.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "method,small AUPRC,small AUROC,other AUPRC,other AUROC");
  for (const std::string m : {"mgm", "ocsvm"}) {
    std::getline(csv, line);
    std::ostringstream want;
    want << m;
    for (const std::string label : {"small", "other"}) {
      const auto ls = read_scores_csv((dir / (m + "_" + label) / "scores.csv").string());
      want << ',' << gadk::detail::format_double(auprc(ls)) << ',' << gadk::detail::format_double(auroc(ls));
    }
    EXPECT_EQ(line, want.str());
  }
  const auto table = json::parse(slurp(dir / "table.json"));
  EXPECT_EQ(table.size(), 2u);
}

TEST(Cli, ExitCodes) {
  const auto dir = tmp("cli");
  write_text(dir / "ok.json", config_for("mgm").dump());
  write_text(dir / "bad.json", "{\"method\": \"mgm\"");
  auto unknown = config_for("mgm");
  unknown["surprise"] = true;
  write_text(dir / "unknown.json", unknown.dump());
  json missing{{"method", "mgm"}, {"dataset", {{"path", (dir / "nope.csv").string()}}}};
  write_text(dir / "missing.json", missing.dump());

  EXPECT_EQ(cli("run --config " + (dir / "ok.json").string() + " --out " + (dir / "out").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "scores.csv"));
  EXPECT_EQ(cli("eval --scores " + (dir / "out" / "scores.csv").string() + " --curves " + (dir / "curves").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "curves" / "roc.csv"));
  EXPECT_TRUE(fs::exists(dir / "curves" / "pr.csv"));
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "unknown.json").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "absent.json").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "missing.json").string()), 3);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("run"), 2);
}

TEST(Cli, GenerateThenScoreWithCheckpoint) {
  const auto dir = tmp("cli_score");
  write_text(dir / "synth.json", json{{"synthetic", small_synthetic()}}.dump());
  ASSERT_EQ(cli("generate --config " + (dir / "synth.json").string() + " --out " + (dir / "d.csv").string() + " --seed 5"), 0);
  const auto ds = load_groups((dir / "d.csv").string(), DataFormat::CsvLong);
  EXPECT_EQ(ds.size(), 46u);
  write_text(dir / "vae.json", config_for("vae").dump());
  ASSERT_EQ(cli("run --config " + (dir / "vae.json").string() + " --out " + (dir / "run").string()), 0);
  ASSERT_EQ(cli("score --model " + (dir / "run" / "model.gadt").string() + " --data " + (dir / "d.csv").string() +
                " --out " + (dir / "scored").string()),
            0);
  const auto ls = read_scores_csv((dir / "scored" / "scores.csv").string());
  EXPECT_EQ(ls.size(), 46u);
  // A non-DGM checkpoint has no references to score against.
  write_text(dir / "mgm.json", config_for("mgm").dump());
  ASSERT_EQ(cli("run --config " + (dir / "mgm.json").string() + " --out " + (dir / "mgm").string()), 0);
  EXPECT_NE(cli("score --model " + (dir / "mgm" / "model.gadt").string() + " --data " + (dir / "d.csv").string()), 0);
}
