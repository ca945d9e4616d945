// gadk command-line front end.
//
//   gadk generate --config synth.json --out data.csv
//   gadk run      --config experiment.json [--seed N] [--out DIR] [--format csv|json]
//   gadk suite    --config CONFIG_DIR --out DIR [--seed N] [--format csv|json]
//   gadk eval     --scores scores.csv [--curves DIR] [--format csv|json]
//   gadk score    --model model.gadt --data groups.csv --out DIR [--seed N]
//
// Exit codes: 0 success, 2 config error, 3 runtime error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gadk/harness.hpp"

namespace {

using gadk::Errc;
using gadk::Error;
namespace h = gadk::harness;

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

void print_report(const h::RunReport& r, const std::string& format) {
  if (format == "json") {
    std::cout << h::report_json(r, false).dump(2) << '\n';
    return;
  }
  auto cell = [](const std::optional<double>& v) { return v ? gadk::detail::format_double(*v) : std::string(); };
  std::cout << "method,dataset_label,seed,auprc,auroc,seconds\n"
            << r.method << ',' << r.dataset_label << ',' << r.seed << ',' << cell(r.auprc) << ','
            << cell(r.auroc) << ',' << r.seconds.total() << '\n';
}

int cmd_generate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
  std::ifstream is(config);
  if (!is) throw Error(Errc::ConfigError, "cannot open " + config);
  h::json j;
  try {
    j = h::json::parse(is);
  } catch (const h::json::exception& e) {
    throw Error(Errc::ConfigError, config + ": " + e.what());
  }
  if (j.contains("synthetic")) j = j.at("synthetic");
  auto cfg = h::detail::parse_synthetic(j, seed.value_or(0));
  if (seed) cfg.seed = *seed;
  const auto ds = gadk::generate(cfg);
  gadk::save_groups(out, ds, gadk::format_for_path(out));
  std::cerr << "wrote " << ds.size() << " groups to " << out << '\n';
  return 0;
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
            const std::string& format) {
  auto cfg = h::load_config(config);
  if (seed) cfg = h::with_seed(cfg, *seed);
  if (!out.empty()) cfg.output = out;
  print_report(h::run(cfg), format);
  return 0;
}

int cmd_suite(const std::string& dir, std::optional<std::uint64_t> seed, const std::string& out,
              const std::string& format) {
  std::vector<h::ExperimentConfig> cfgs;
  std::vector<std::string> names;
  for (const auto& p : h::suite_configs(dir)) {
    auto cfg = h::load_config(p.string());
    if (seed) cfg = h::with_seed(cfg, *seed);
    cfgs.push_back(std::move(cfg));
    names.push_back(p.stem().string());
  }
  const auto res = h::run_suite(std::move(cfgs), names, out);
  if (format == "json") {
    std::ifstream is(std::filesystem::path(out) / "table.json");
    std::cout << is.rdbuf();
  } else {
    std::ifstream is(std::filesystem::path(out) / "table.csv");
    std::cout << is.rdbuf();
  }
  return 0;
}

int cmd_eval(const std::string& scores, const std::string& curves, const std::string& format) {
  const auto ls = h::read_scores_csv(scores);
  const double pr = gadk::auprc(ls);
  const double roc = gadk::auroc(ls);
  if (!curves.empty()) {
    std::filesystem::create_directories(curves);
    std::ofstream r(std::filesystem::path(curves) / "roc.csv");
    h::write_curve_csv(r, gadk::roc_curve(ls), "fpr", "tpr");
    std::ofstream p(std::filesystem::path(curves) / "pr.csv");
    h::write_curve_csv(p, gadk::pr_curve(ls), "recall", "precision");
  }
  if (format == "json") {
    std::cout << h::json{{"n_groups", ls.size()}, {"auprc", pr}, {"auroc", roc}}.dump(2) << '\n';
  } else {
    std::cout << "n_groups,auprc,auroc\n"
              << ls.size() << ',' << gadk::detail::format_double(pr) << ',' << gadk::detail::format_double(roc)
              << '\n';
  }
  return 0;
}

/// Scores unseen groups against the references stored in a DGM checkpoint.
int cmd_score(const std::string& model_path, const std::string& data, const std::string& out,
              const std::string& format) {
  const auto tensors = gadk::load_tensors(model_path);
  const auto model = gadk::DgmModel::from_tensors(tensors);
  std::vector<gadk::GroupReference> refs;
  for (std::size_t d = 0;; ++d) {
    auto it = tensors.find("reference/" + std::to_string(d));
    if (it == tensors.end()) break;
    refs.push_back(gadk::GroupReference{it->second});
  }
  if (refs.empty()) throw Error(Errc::ConfigError, model_path + " holds no stored references");
  const auto ds = gadk::load_groups(data, gadk::format_for_path(data));
  gadk::validate_dataset(ds);

  h::RunReport rep;
  rep.method = gadk::dgm_kind_name(model.kind());
  rep.dataset_label = std::filesystem::path(data).stem().string();
  rep.config = h::json{{"model", model_path}, {"data", data}};
  rep.scores = gadk::score(refs, ds, model.config().scoring);
  rep.labels = ds.labels;
  if (ds.labels) {
    const auto ls = gadk::labeled(rep.scores, *ds.labels);
    rep.auprc = gadk::auprc(ls);
    rep.auroc = gadk::auroc(ls);
  }
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream sc(std::filesystem::path(out) / "scores.csv");
    h::write_scores_csv(sc, rep.scores, rep.labels);
    h::write_json_file(std::filesystem::path(out) / "report.json", h::report_json(rep, false));
  }
  print_report(rep, format);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gadk: group anomaly detection experiments"};
  app.require_subcommand(1);

  std::string config, out, format = "csv", scores, curves, model, data;
  std::optional<std::uint64_t> seed;
  auto add_format = [&](CLI::App* c) {
    c->add_option("--format", format, "stdout format")->check(CLI::IsMember({"csv", "json"}));
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic rotated-Gaussian dataset");
  gen->add_option("--config", config, "synthetic config (json)")->required();
  gen->add_option("--out", out, "output file (.csv or binary)")->required();
  gen->add_option("--seed", seed, "override the config seed");

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config, "experiment config (json)")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", out, "output directory");
  add_format(run);

  auto* suite = app.add_subcommand("suite", "run every *.json config in a directory");
  suite->add_option("--config", config, "config directory")->required();
  suite->add_option("--out", out, "output directory")->required();
  suite->add_option("--seed", seed, "override every config seed");
  add_format(suite);

  auto* ev = app.add_subcommand("eval", "recompute metrics from a scores.csv");
  ev->add_option("--scores", scores, "scores.csv with a label column")->required();
  ev->add_option("--curves", curves, "directory for roc.csv and pr.csv");
  add_format(ev);

  auto* sc = app.add_subcommand("score", "score unseen groups with a DGM checkpoint");
  sc->add_option("--model", model, "model.gadt from a vae/aae run")->required();
  sc->add_option("--data", data, "groups to score")->required();
  sc->add_option("--out", out, "output directory");
  add_format(sc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    if (*gen) return cmd_generate(config, out, seed);
    if (*run) return cmd_run(config, seed, out, format);
    if (*suite) return cmd_suite(config, seed, out, format);
    if (*ev) return cmd_eval(scores, curves, format);
    if (*sc) return cmd_score(model, data, out, format);
  } catch (const Error& e) {
    std::cerr << "error [" << gadk::errc_name(e.code()) << "]: " << e.what() << '\n';
    return e.code() == Errc::ConfigError || e.code() == Errc::InvalidConfig ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kRuntimeError;
}
