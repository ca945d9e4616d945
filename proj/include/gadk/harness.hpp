#pragma once

// Config-driven experiment runner: load or generate a dataset, fit one
// method, score, evaluate, and write results.
//
// Labels never reach a fitting routine. The only label-derived input is the
// default nu for the SVM methods (the true anomaly proportion), which can be
// overridden in the config.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gadk/core.hpp"
#include "gadk/dgm.hpp"
#include "gadk/eval.hpp"
#include "gadk/io.hpp"
#include "gadk/kernel.hpp"
#include "gadk/kmeans.hpp"
#include "gadk/mgm.hpp"
#include "gadk/ocsvm.hpp"
#include "gadk/synthetic.hpp"

namespace gadk::harness {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

enum class Method { Vae, Aae, Mgm, Ocsmm, Ocsvm };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Vae: return "vae";
    case Method::Aae: return "aae";
    case Method::Mgm: return "mgm";
    case Method::Ocsmm: return "ocsmm";
    case Method::Ocsvm: return "ocsvm";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "vae") return Method::Vae;
  if (s == "aae") return Method::Aae;
  if (s == "mgm") return Method::Mgm;
  if (s == "ocsmm") return Method::Ocsmm;
  if (s == "ocsvm") return Method::Ocsvm;
  throw Error(Errc::ConfigError, "unknown method '" + s + "'");
}

struct DatasetSource {
  std::optional<SyntheticConfig> synthetic;
  std::string path;  // used when synthetic is empty
  DataFormat format = DataFormat::CsvLong;
  bool shuffle = true;  // permute group order under the run seed (default for synthetic only)
};

enum class SvmFeatures { BagOfFeatures, Flatten };

struct SvmParams {
  std::optional<double> nu;         // true anomaly proportion when empty
  std::optional<double> bandwidth;  // median heuristic when empty
  std::size_t bandwidth_max_pairs = 1'000'000;
  std::size_t max_points_per_group = 0;  // OCSMM only
  SvmFeatures features = SvmFeatures::BagOfFeatures;  // OCSVM only
  std::size_t k = 16;                                 // OCSVM codebook size
  std::size_t kmeans_max_iter = 100;
  SvmOptions solver{};
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::optional<DatasetSource> score_dataset;  // unseen groups scored by the fitted model
  Method method = Method::Mgm;
  std::string dataset_label = "default";
  std::uint64_t seed = 0;
  std::string output;  // directory; nothing is written when empty
  bool dump_gram = false;
  TrainConfig train{};
  MgmOptions mgm{};
  SvmParams svm{};
  json echo;  // config as parsed, with defaults filled in
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("field '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::ConfigError, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw Error(Errc::ConfigError, "unknown field '" + key + "' in " + where);
    }
  }
}

inline SyntheticConfig parse_synthetic(const json& j, std::uint64_t default_seed) {
  reject_unknown(j, {"n_regular", "n_anomalous", "points_per_group", "mean_low", "mean_high", "var", "cov", "seed"},
                 "synthetic");
  SyntheticConfig c;
  c.n_regular = get_or(j, "n_regular", c.n_regular);
  c.n_anomalous = get_or(j, "n_anomalous", c.n_anomalous);
  c.points_per_group = get_or(j, "points_per_group", c.points_per_group);
  c.mean_low = get_or(j, "mean_low", c.mean_low);
  c.mean_high = get_or(j, "mean_high", c.mean_high);
  c.var = get_or(j, "var", c.var);
  c.cov = get_or(j, "cov", c.cov);
  c.seed = get_or(j, "seed", default_seed);
  try {
    validate(c);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, std::string("synthetic: ") + e.what());
  }
  return c;
}

inline json synthetic_json(const SyntheticConfig& c) {
  return json{{"n_regular", c.n_regular}, {"n_anomalous", c.n_anomalous},
              {"points_per_group", c.points_per_group}, {"mean_low", c.mean_low},
              {"mean_high", c.mean_high}, {"var", c.var}, {"cov", c.cov}, {"seed", c.seed}};
}

inline DataFormat parse_format(const std::string& s) {
  if (s == "csv") return DataFormat::CsvLong;
  if (s == "binary") return DataFormat::Binary;
  throw Error(Errc::ConfigError, "unknown data format '" + s + "'");
}

inline DatasetSource parse_source(const json& j, std::uint64_t seed, const fs::path& base) {
  reject_unknown(j, {"synthetic", "path", "format", "shuffle"}, "dataset");
  DatasetSource src;
  const bool has_synth = j.contains("synthetic");
  const bool has_path = j.contains("path");
  if (has_synth == has_path) throw Error(Errc::ConfigError, "dataset needs exactly one of 'synthetic' or 'path'");
  if (has_synth) {
    src.synthetic = parse_synthetic(j.at("synthetic"), seed);
  } else {
    fs::path p = get_or<std::string>(j, "path", "");
    if (p.is_relative() && !base.empty()) p = base / p;
    src.path = p.string();
    src.format = j.contains("format") ? parse_format(get_or<std::string>(j, "format", "csv"))
                                      : format_for_path(src.path);
  }
  src.shuffle = get_or(j, "shuffle", has_synth);
  return src;
}

inline json source_json(const DatasetSource& s) {
  json j;
  if (s.synthetic) {
    j["synthetic"] = synthetic_json(*s.synthetic);
  } else {
    j["path"] = s.path;
    j["format"] = s.format == DataFormat::CsvLong ? "csv" : "binary";
  }
  j["shuffle"] = s.shuffle;
  return j;
}

inline std::vector<std::size_t> sizes(const json& j, const char* key, std::vector<std::size_t> fallback) {
  return get_or(j, key, std::move(fallback));
}

inline void parse_dgm(const json& p, ExperimentConfig& cfg) {
  reject_unknown(p, {"latent_size", "encoder_hidden", "decoder_hidden", "discriminator_hidden", "epochs",
                     "minibatch_size", "learning_rate", "kl_weight", "adversarial_weight", "dropout",
                     "l2_weight", "n_reference_draws", "canonical", "distance"},
                 "params");
  TrainConfig& t = cfg.train;
  t.kind = cfg.method == Method::Vae ? DgmKind::Vae : DgmKind::Aae;
  t.latent_size = get_or(p, "latent_size", t.latent_size);
  t.encoder_hidden = sizes(p, "encoder_hidden", t.encoder_hidden);
  t.decoder_hidden = sizes(p, "decoder_hidden", t.decoder_hidden);
  t.discriminator_hidden = sizes(p, "discriminator_hidden", t.discriminator_hidden);
  t.epochs = get_or(p, "epochs", t.epochs);
  t.minibatch_size = get_or(p, "minibatch_size", t.minibatch_size);
  t.learning_rate = get_or(p, "learning_rate", t.learning_rate);
  t.kl_weight = get_or(p, "kl_weight", t.kl_weight);
  t.adversarial_weight = get_or(p, "adversarial_weight", t.adversarial_weight);
  t.dropout = get_or(p, "dropout", t.dropout);
  t.l2_weight = get_or(p, "l2_weight", t.l2_weight);
  t.n_reference_draws = get_or(p, "n_reference_draws", t.n_reference_draws);
  t.scoring.canonical = get_or(p, "canonical", t.scoring.canonical);
  const auto dist = get_or<std::string>(p, "distance", "centered_frobenius");
  if (dist == "frobenius") {
    t.scoring.distance = GroupDistance::Frobenius;
  } else if (dist == "centered_frobenius") {
    t.scoring.distance = GroupDistance::CenteredFrobenius;
  } else {
    throw Error(Errc::ConfigError, "unknown distance '" + dist + "'");
  }
  t.seed = cfg.seed;
  try {
    validate(t);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, std::string("params: ") + e.what());
  }
}

inline json dgm_json(const TrainConfig& t) {
  return json{{"latent_size", t.latent_size},
              {"encoder_hidden", t.encoder_hidden},
              {"decoder_hidden", t.decoder_hidden},
              {"discriminator_hidden", t.discriminator_hidden},
              {"epochs", t.epochs},
              {"minibatch_size", t.minibatch_size},
              {"learning_rate", t.learning_rate},
              {"kl_weight", t.kl_weight},
              {"adversarial_weight", t.adversarial_weight},
              {"dropout", t.dropout},
              {"l2_weight", t.l2_weight},
              {"n_reference_draws", t.n_reference_draws},
              {"canonical", t.scoring.canonical},
              {"distance", t.scoring.distance == GroupDistance::Frobenius ? "frobenius" : "centered_frobenius"}};
}

inline void parse_mgm(const json& p, ExperimentConfig& cfg) {
  reject_unknown(p, {"types", "components", "max_iter", "tol", "restarts", "regularization"}, "params");
  MgmOptions& m = cfg.mgm;
  m.types = get_or(p, "types", m.types);
  m.components = get_or(p, "components", m.components);
  m.max_iter = get_or(p, "max_iter", m.max_iter);
  m.tol = get_or(p, "tol", m.tol);
  m.restarts = get_or(p, "restarts", m.restarts);
  m.regularization = get_or(p, "regularization", m.regularization);
  m.seed = cfg.seed;
  if (m.types < 1 || m.components < 1 || m.restarts < 1 || m.max_iter < 1 || m.regularization < 0.0) {
    throw Error(Errc::ConfigError, "params: types, components, restarts, max_iter must be >= 1 and regularization >= 0");
  }
}

inline json mgm_json(const MgmOptions& m) {
  return json{{"types", m.types}, {"components", m.components}, {"max_iter", m.max_iter},
              {"tol", m.tol},     {"restarts", m.restarts},     {"regularization", m.regularization}};
}

inline void parse_svm(const json& p, ExperimentConfig& cfg) {
  if (cfg.method == Method::Ocsmm) {
    reject_unknown(p, {"nu", "bandwidth", "bandwidth_max_pairs", "max_points_per_group", "svm_tol", "svm_max_iter"},
                   "params");
  } else {
    reject_unknown(p, {"nu", "bandwidth", "bandwidth_max_pairs", "features", "k", "kmeans_max_iter", "svm_tol",
                       "svm_max_iter"},
                   "params");
  }
  SvmParams& s = cfg.svm;
  if (p.contains("nu")) s.nu = get_or(p, "nu", 0.0);
  if (p.contains("bandwidth")) s.bandwidth = get_or(p, "bandwidth", 0.0);
  s.bandwidth_max_pairs = get_or(p, "bandwidth_max_pairs", s.bandwidth_max_pairs);
  s.max_points_per_group = get_or(p, "max_points_per_group", s.max_points_per_group);
  const auto feat = get_or<std::string>(p, "features", "bag");
  if (feat == "bag") {
    s.features = SvmFeatures::BagOfFeatures;
  } else if (feat == "flatten") {
    s.features = SvmFeatures::Flatten;
  } else {
    throw Error(Errc::ConfigError, "unknown features '" + feat + "' (bag or flatten)");
  }
  s.k = get_or(p, "k", s.k);
  s.kmeans_max_iter = get_or(p, "kmeans_max_iter", s.kmeans_max_iter);
  s.solver.tol = get_or(p, "svm_tol", s.solver.tol);
  s.solver.max_iter = get_or(p, "svm_max_iter", s.solver.max_iter);
  if (s.nu && !(*s.nu > 0.0 && *s.nu <= 1.0)) throw Error(Errc::ConfigError, "nu must be in (0, 1]");
  if (s.bandwidth && !(*s.bandwidth > 0.0)) throw Error(Errc::ConfigError, "bandwidth must be positive");
  if (s.k < 1) throw Error(Errc::ConfigError, "k must be >= 1");
}

inline json svm_json(const SvmParams& s, Method m) {
  json j;
  j["nu"] = s.nu ? json(*s.nu) : json(nullptr);
  j["bandwidth"] = s.bandwidth ? json(*s.bandwidth) : json(nullptr);
  j["bandwidth_max_pairs"] = s.bandwidth_max_pairs;
  if (m == Method::Ocsmm) {
    j["max_points_per_group"] = s.max_points_per_group;
  } else {
    j["features"] = s.features == SvmFeatures::Flatten ? "flatten" : "bag";
    j["k"] = s.k;
    j["kmeans_max_iter"] = s.kmeans_max_iter;
  }
  j["svm_tol"] = s.solver.tol;
  j["svm_max_iter"] = s.solver.max_iter;
  return j;
}

}  // namespace detail

/// Fills every field from `j`; `base` resolves relative dataset paths.
inline ExperimentConfig parse_config(const json& j, const fs::path& base = {}) {
  detail::reject_unknown(j, {"dataset", "score_dataset", "method", "dataset_label", "seed", "output", "params",
                             "dump_gram"},
                         "config");
  ExperimentConfig cfg;
  if (!j.contains("method")) throw Error(Errc::ConfigError, "config needs 'method'");
  if (!j.contains("dataset")) throw Error(Errc::ConfigError, "config needs 'dataset'");
  cfg.method = parse_method(detail::get_or<std::string>(j, "method", ""));
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  cfg.dataset = detail::parse_source(j.at("dataset"), cfg.seed, base);
  if (j.contains("score_dataset")) cfg.score_dataset = detail::parse_source(j.at("score_dataset"), cfg.seed, base);
  cfg.dataset_label = detail::get_or<std::string>(j, "dataset_label", "default");
  cfg.output = detail::get_or<std::string>(j, "output", "");
  cfg.dump_gram = detail::get_or(j, "dump_gram", false);
  const json params = j.contains("params") ? j.at("params") : json::object();
  switch (cfg.method) {
    case Method::Vae:
    case Method::Aae: detail::parse_dgm(params, cfg); break;
    case Method::Mgm: detail::parse_mgm(params, cfg); break;
    case Method::Ocsmm:
    case Method::Ocsvm: detail::parse_svm(params, cfg); break;
  }
  json echo;
  echo["method"] = method_name(cfg.method);
  echo["dataset_label"] = cfg.dataset_label;
  echo["seed"] = cfg.seed;
  echo["dataset"] = detail::source_json(cfg.dataset);
  if (cfg.score_dataset) echo["score_dataset"] = detail::source_json(*cfg.score_dataset);
  switch (cfg.method) {
    case Method::Vae:
    case Method::Aae: echo["params"] = detail::dgm_json(cfg.train); break;
    case Method::Mgm: echo["params"] = detail::mgm_json(cfg.mgm); break;
    case Method::Ocsmm:
    case Method::Ocsvm: echo["params"] = detail::svm_json(cfg.svm, cfg.method); break;
  }
  cfg.echo = std::move(echo);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::ConfigError, "cannot open config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, path + ": " + e.what());
  }
  return parse_config(j, fs::path(path).parent_path());
}

/// Re-derives seed-dependent fields after the seed changes (CLI --seed).
inline ExperimentConfig with_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  json j = cfg.echo;
  j["seed"] = seed;
  for (const char* key : {"dataset", "score_dataset"}) {
    if (j.contains(key) && j[key].contains("synthetic")) j[key]["synthetic"].erase("seed");
  }
  if (!cfg.output.empty()) j["output"] = cfg.output;
  if (cfg.dump_gram) j["dump_gram"] = true;
  if (cfg.svm.nu == std::nullopt && j.contains("params")) j["params"].erase("nu");
  if (cfg.svm.bandwidth == std::nullopt && j.contains("params")) j["params"].erase("bandwidth");
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Running

struct StageTimes {
  double load = 0.0;
  double fit = 0.0;
  double reference = 0.0;
  double score = 0.0;
  double eval = 0.0;

  double total() const { return load + fit + reference + score + eval; }
};

struct RunReport {
  std::string method;
  std::string dataset_label;
  std::uint64_t seed = 0;
  json config;
  ScoreTable scores;
  std::optional<std::vector<bool>> labels;
  std::optional<double> auprc;
  std::optional<double> auroc;
  StageTimes seconds;
  json details;  // method diagnostics (bandwidth, nu, iterations, ...)
};

/// Every field except wall-clock times.
inline bool same_results(const RunReport& a, const RunReport& b) {
  return a.method == b.method && a.dataset_label == b.dataset_label && a.seed == b.seed && a.config == b.config &&
         a.scores.scores == b.scores.scores && a.scores.order == b.scores.order && a.labels == b.labels &&
         a.auprc == b.auprc && a.auroc == b.auroc && a.details == b.details;
}

inline GroupDataset load_source(const DatasetSource& src, std::uint64_t seed) {
  GroupDataset ds = src.synthetic ? generate(*src.synthetic) : load_groups(src.path, src.format);
  if (src.shuffle) ds = shuffled(ds, seed ^ 0x5DEECE66DULL);
  return ds;
}

/// In-memory cache keyed by the dataset description, shared across suite runs.
class DatasetCache {
 public:
  const GroupDataset& get(const DatasetSource& src, std::uint64_t seed) {
    const std::string key = detail::source_json(src).dump() + "#" + std::to_string(seed);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, load_source(src, seed)).first;
    return it->second;
  }

 private:
  std::map<std::string, GroupDataset> cache_;
};

namespace detail {

using clock = std::chrono::steady_clock;

inline double since(clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); }

inline double true_anomaly_fraction(const GroupDataset& ds) {
  if (!ds.labels) throw Error(Errc::ConfigError, "nu not given and the dataset has no labels to derive it from");
  const auto n = std::count(ds.labels->begin(), ds.labels->end(), true);
  if (n == 0) throw Error(Errc::ConfigError, "nu not given and the dataset has no anomalies");
  return static_cast<double>(n) / static_cast<double>(ds.size());
}

/// One row per group: bag-of-features histogram or the raw flattened group.
inline Matrix svm_features(const GroupDataset& ds, const SvmParams& p, const Codebook* cb) {
  if (p.features == SvmFeatures::Flatten) {
    Matrix x(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.groups.front().data.size()));
    for (std::size_t m = 0; m < ds.size(); ++m) {
      if (ds.groups[m].data.size() != x.cols()) {
        throw Error(Errc::UnequalGroupSizes, "flatten features need equal group sizes");
      }
      x.row(static_cast<Eigen::Index>(m)) = flatten_group(ds.groups[m]).transpose();
    }
    return x;
  }
  return stack_single_rows(bag_of_features(ds, *cb));
}

inline GroupDataset rows_as_groups(const Matrix& x) {
  GroupDataset out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.groups.emplace_back(Matrix(x.row(i)));
  return out;
}

inline Matrix cross_gram(const Matrix& a, const Matrix& b, const KernelSpec& k) {
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) out(i, j) = rbf_kernel(a.row(i), b.row(j), k);
  }
  return out;
}

inline ScoreTable score_rows(const SvmSolution& sol, const Matrix& gram_rows) {
  std::vector<double> s(static_cast<std::size_t>(gram_rows.rows()));
  for (Eigen::Index i = 0; i < gram_rows.rows(); ++i) {
    const Vector row = gram_rows.row(i).transpose();
    s[static_cast<std::size_t>(i)] = ocsvm_score(sol, {row.data(), static_cast<std::size_t>(row.size())});
  }
  return make_score_table(std::move(s));
}

inline TensorMap svm_tensors(const SvmSolution& sol, const KernelSpec& k) {
  TensorMap t;
  t["svm/alphas"] = Eigen::Map<const Matrix>(sol.alphas.data(), 1, static_cast<Eigen::Index>(sol.alphas.size()));
  Matrix meta(1, 4);
  meta << sol.rho, sol.nu, sol.upper, k.bandwidth;
  t["svm/meta"] = meta;
  return t;
}

inline void write_gram_csv(const std::string& path, const Matrix& k) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::IoError, "cannot write " + path);
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.cols(); ++j) {
      if (j) os << ',';
      os << gadk::detail::format_double(k(i, j));
    }
    os << '\n';
  }
}

}  // namespace detail

inline void write_scores_csv(std::ostream& os, const ScoreTable& t, const std::optional<std::vector<bool>>& labels) {
  os << "group_id,score,rank" << (labels ? ",label" : "") << '\n';
  const auto rank = t.rank_of();
  for (std::size_t m = 0; m < t.size(); ++m) {
    // rank 1 is the most anomalous group
    os << m << ',' << gadk::detail::format_double(t.scores[m]) << ',' << rank[m] + 1;
    if (labels) os << ',' << ((*labels)[m] ? 1 : 0);
    os << '\n';
  }
}

/// Scores and (optional) labels back from a scores.csv.
inline LabeledScores read_scores_csv(const std::string& path, bool require_labels = true) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::IoError, "cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw Error(Errc::ParseError, "empty scores file");
  const auto header = gadk::detail::split_commas(line);
  const auto col = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  const auto score_col = col("score");
  const auto label_col = col("label");
  if (!score_col) throw Error(Errc::ParseError, "scores file lacks a score column");
  if (require_labels && !label_col) throw Error(Errc::ParseError, "scores file lacks a label column");
  LabeledScores out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = gadk::detail::split_commas(line);
    if (cells.size() != header.size()) throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": wrong cell count");
    out.scores.push_back(gadk::detail::parse_double(cells[*score_col], lineno));
    out.is_anomaly.push_back(label_col && cells[*label_col] == "1");
  }
  return out;
}

inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& pts, const char* x, const char* y) {
  os << x << ',' << y << ",threshold\n";
  for (const auto& p : pts) {
    os << gadk::detail::format_double(p.x) << ',' << gadk::detail::format_double(p.y) << ','
       << gadk::detail::format_double(p.threshold) << '\n';
  }
}

inline json report_json(const RunReport& r, bool with_scores = true) {
  json j;
  j["method"] = r.method;
  j["dataset_label"] = r.dataset_label;
  j["seed"] = r.seed;
  j["n_groups"] = r.scores.size();
  j["auprc"] = r.auprc ? json(*r.auprc) : json(nullptr);
  j["auroc"] = r.auroc ? json(*r.auroc) : json(nullptr);
  j["seconds"] = json{{"load", r.seconds.load},           {"fit", r.seconds.fit},
                      {"reference", r.seconds.reference}, {"score", r.seconds.score},
                      {"eval", r.seconds.eval},           {"total", r.seconds.total()}};
  j["details"] = r.details;
  j["config"] = r.config;
  if (with_scores) j["scores"] = r.scores.scores;
  return j;
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::IoError, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

/// Runs one experiment. `cache` lets suites share loaded datasets.
inline RunReport run(const ExperimentConfig& cfg, DatasetCache* cache = nullptr) {
  using detail::clock;
  using detail::since;
  RunReport rep;
  rep.method = method_name(cfg.method);
  rep.dataset_label = cfg.dataset_label;
  rep.seed = cfg.seed;
  rep.config = cfg.echo;

  const fs::path out = cfg.output;
  if (!cfg.output.empty()) fs::create_directories(out);

  auto t = clock::now();
  DatasetCache local;
  DatasetCache& dc = cache ? *cache : local;
  const GroupDataset& train_ds = dc.get(cfg.dataset, cfg.seed);
  validate_dataset(train_ds);
  const GroupDataset* target = &train_ds;
  if (cfg.score_dataset) {
    target = &dc.get(*cfg.score_dataset, cfg.seed);
    validate_dataset(*target);
    if (target->dim() != train_ds.dim()) throw Error(Errc::DimensionMismatch, "score_dataset dim differs from dataset");
  }
  const GroupDataset fit_ds = train_ds.unlabeled();
  rep.seconds.load = since(t);

  switch (cfg.method) {
    case Method::Vae:
    case Method::Aae: {
      t = clock::now();
      DgmModel model = train(fit_ds, cfg.train);
      rep.seconds.fit = since(t);
      t = clock::now();
      Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
      std::vector<GroupReference> refs;
      for (std::size_t d = 0; d < cfg.train.n_reference_draws; ++d) refs.push_back(group_reference(model, fit_ds, rng));
      rep.seconds.reference = since(t);
      t = clock::now();
      rep.scores = score(refs, *target, cfg.train.scoring);
      rep.seconds.score = since(t);
      const auto& h = model.history();
      rep.details["epochs"] = h.size();
      if (!h.empty()) {
        rep.details["final_recon"] = h.back().recon;
        rep.details["final_regularizer"] = h.back().kl_or_adv;
      }
      if (!cfg.output.empty()) {
        std::ofstream curve(out / "training_curve.csv");
        write_training_curve(curve, model);
        TensorMap ckpt = model.to_tensors();
        for (std::size_t d = 0; d < refs.size(); ++d) ckpt["reference/" + std::to_string(d)] = refs[d].data;
        save_tensors((out / "model.gadt").string(), ckpt);
      }
      break;
    }
    case Method::Mgm: {
      t = clock::now();
      const MgmModel model = mgm_fit(fit_ds, cfg.mgm);
      rep.seconds.fit = since(t);
      t = clock::now();
      rep.scores = mgm_score(model, *target);
      rep.seconds.score = since(t);
      rep.details["iterations"] = model.objective_history.size() - 1;
      rep.details["log_likelihood"] = model.log_likelihood;
      if (!cfg.output.empty()) save_tensors((out / "model.gadt").string(), mgm_to_tensors(model));
      break;
    }
    case Method::Ocsmm: {
      const double nu = cfg.svm.nu ? *cfg.svm.nu : detail::true_anomaly_fraction(train_ds);
      t = clock::now();
      OcsmmOptions opt;
      if (cfg.svm.bandwidth) opt.kernel = KernelSpec{*cfg.svm.bandwidth};
      opt.bandwidth_max_pairs = cfg.svm.bandwidth_max_pairs;
      opt.max_points_per_group = cfg.svm.max_points_per_group;
      opt.seed = cfg.seed;
      opt.svm = cfg.svm.solver;
      OcsmmResult res = ocsmm_pipeline(fit_ds, nu, opt);
      rep.seconds.fit = since(t);
      t = clock::now();
      if (cfg.score_dataset) {
        const GroupDataset used_train = subsample_points(fit_ds, opt.max_points_per_group, opt.seed + 1);
        const GroupDataset used_target = subsample_points(target->unlabeled(), opt.max_points_per_group, opt.seed + 2);
        Matrix rows(static_cast<Eigen::Index>(used_target.size()), static_cast<Eigen::Index>(used_train.size()));
        for (std::size_t i = 0; i < used_target.size(); ++i) {
          for (std::size_t j = 0; j < used_train.size(); ++j) {
            rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                mean_map_kernel(used_target.groups[i], used_train.groups[j], res.kernel);
          }
        }
        rep.scores = detail::score_rows(res.solution, rows);
      } else {
        rep.scores = res.scores;
      }
      rep.seconds.score = since(t);
      rep.details["nu"] = nu;
      rep.details["bandwidth"] = res.kernel.bandwidth;
      rep.details["rho"] = res.solution.rho;
      rep.details["solver_iterations"] = res.solution.iterations;
      rep.details["support_vectors"] = res.solution.support_indices.size();
      if (!cfg.output.empty()) {
        save_tensors((out / "model.gadt").string(), detail::svm_tensors(res.solution, res.kernel));
        if (cfg.dump_gram) detail::write_gram_csv((out / "gram.csv").string(), res.gram);
      }
      break;
    }
    case Method::Ocsvm: {
      const double nu = cfg.svm.nu ? *cfg.svm.nu : detail::true_anomaly_fraction(train_ds);
      t = clock::now();
      std::optional<Codebook> cb;
      if (cfg.svm.features == SvmFeatures::BagOfFeatures) {
        cb = kmeans(pool_points(fit_ds), cfg.svm.k, cfg.svm.kmeans_max_iter, cfg.seed);
      }
      const Matrix x = detail::svm_features(fit_ds, cfg.svm, cb ? &*cb : nullptr);
      const KernelSpec kernel{cfg.svm.bandwidth ? *cfg.svm.bandwidth
                                                : median_bandwidth(detail::rows_as_groups(x),
                                                                   cfg.svm.bandwidth_max_pairs, cfg.seed)};
      const Matrix gram = point_gram(x, kernel);
      const SvmSolution sol = ocsvm_fit(gram, nu, cfg.svm.solver);
      rep.seconds.fit = since(t);
      t = clock::now();
      if (cfg.score_dataset) {
        const Matrix xt = detail::svm_features(target->unlabeled(), cfg.svm, cb ? &*cb : nullptr);
        if (xt.cols() != x.cols()) throw Error(Errc::DimensionMismatch, "score_dataset features differ in length");
        rep.scores = detail::score_rows(sol, detail::cross_gram(xt, x, kernel));
      } else {
        rep.scores = ocsvm_training_scores(sol);
      }
      rep.seconds.score = since(t);
      rep.details["nu"] = nu;
      rep.details["bandwidth"] = kernel.bandwidth;
      rep.details["rho"] = sol.rho;
      rep.details["solver_iterations"] = sol.iterations;
      rep.details["support_vectors"] = sol.support_indices.size();
      rep.details["features"] = cfg.svm.features == SvmFeatures::Flatten ? "flatten" : "bag";
      if (!cfg.output.empty()) {
        TensorMap ckpt = detail::svm_tensors(sol, kernel);
        if (cb) ckpt["svm/codebook"] = cb->centroids;
        save_tensors((out / "model.gadt").string(), ckpt);
        if (cfg.dump_gram) detail::write_gram_csv((out / "gram.csv").string(), gram);
      }
      break;
    }
  }

  // Labels enter here and nowhere earlier.
  t = clock::now();
  rep.labels = target->labels;
  if (rep.labels) {
    const auto ls = labeled(rep.scores, *rep.labels);
    rep.auprc = auprc(ls);
    rep.auroc = auroc(ls);
  }
  rep.seconds.eval = since(t);

  if (!cfg.output.empty()) {
    std::ofstream sc(out / "scores.csv");
    if (!sc) throw Error(Errc::IoError, "cannot write scores.csv");
    write_scores_csv(sc, rep.scores, rep.labels);
    write_json_file(out / "report.json", report_json(rep, false));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Suites

/// Config files (*.json) in a directory, sorted by name.
inline std::vector<fs::path> suite_configs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::ConfigError, dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(Errc::ConfigError, "no *.json configs in " + dir.string());
  return out;
}

struct SuiteResult {
  std::vector<RunReport> runs;
  std::vector<std::string> methods;         // row order: first appearance
  std::vector<std::string> dataset_labels;  // column order: first appearance
};

/// Runs every config, each into out/<config stem>/, and writes table.csv and table.json.
inline SuiteResult run_suite(std::vector<ExperimentConfig> cfgs, const std::vector<std::string>& names,
                             const fs::path& out) {
  if (names.size() != cfgs.size()) throw Error(Errc::LengthMismatch, "one name per config");
  SuiteResult res;
  DatasetCache cache;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    cfgs[i].output = (out / names[i]).string();
    res.runs.push_back(run(cfgs[i], &cache));
    const auto& r = res.runs.back();
    if (std::find(res.methods.begin(), res.methods.end(), r.method) == res.methods.end()) res.methods.push_back(r.method);
    if (std::find(res.dataset_labels.begin(), res.dataset_labels.end(), r.dataset_label) == res.dataset_labels.end()) {
      res.dataset_labels.push_back(r.dataset_label);
    }
  }
  fs::create_directories(out);
  auto find = [&](const std::string& m, const std::string& d) -> const RunReport* {
    for (const auto& r : res.runs) {
      if (r.method == m && r.dataset_label == d) return &r;
    }
    return nullptr;
  };
  auto cell = [](const std::optional<double>& v) { return v ? gadk::detail::format_double(*v) : std::string(); };
  std::ofstream csv(out / "table.csv");
  if (!csv) throw Error(Errc::IoError, "cannot write table.csv");
  csv << "method";
  for (const auto& d : res.dataset_labels) csv << ',' << d << " AUPRC," << d << " AUROC";
  csv << '\n';
  json table = json::array();
  for (const auto& m : res.methods) {
    csv << m;
    json row{{"method", m}};
    for (const auto& d : res.dataset_labels) {
      const RunReport* r = find(m, d);
      csv << ',' << (r ? cell(r->auprc) : "") << ',' << (r ? cell(r->auroc) : "");
      row[d] = r ? json{{"auprc", r->auprc ? json(*r->auprc) : json(nullptr)},
                        {"auroc", r->auroc ? json(*r->auroc) : json(nullptr)},
                        {"seconds", r->seconds.total()}}
                 : json(nullptr);
    }
    csv << '\n';
    table.push_back(std::move(row));
  }
  write_json_file(out / "table.json", table);
  return res;
}

}  // namespace gadk::harness
