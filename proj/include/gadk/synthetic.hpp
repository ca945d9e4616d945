#pragma once

// Rotated-Gaussian group benchmark: regular groups share a positively
// correlated bivariate covariance, anomalous groups the reflected (negatively
// correlated) one. Group means are uniform on a box.

#include <cmath>
#include <cstdint>
#include <string>

#include "gadk/core.hpp"
#include "gadk/random.hpp"

namespace gadk {

struct SyntheticConfig {
  std::size_t n_regular = 500;
  std::size_t n_anomalous = 50;
  std::size_t points_per_group = 1536;
  double mean_low = -1.0;
  double mean_high = 1.0;
  double var = 0.2;
  double cov = 0.14;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticConfig& cfg) {
  if (!(cfg.var > 0.0)) throw Error(Errc::InvalidConfig, "var must be positive");
  if (!(std::abs(cfg.cov) < cfg.var)) throw Error(Errc::InvalidConfig, "|cov| must be < var");
  if (cfg.n_regular < 1) throw Error(Errc::InvalidConfig, "n_regular must be >= 1");
  if (cfg.points_per_group < 2) throw Error(Errc::InvalidConfig, "points_per_group must be >= 2");
  if (!(cfg.mean_low <= cfg.mean_high) || !std::isfinite(cfg.mean_low) ||
      !std::isfinite(cfg.mean_high)) {
    throw Error(Errc::InvalidConfig, "mean bounds must be finite with mean_low <= mean_high");
  }
}

/// 2x2 covariance for a group: off-diagonal +cov for regular, -cov for anomalous.
inline Eigen::Matrix2d group_covariance(const SyntheticConfig& cfg, bool anomalous) {
  const double c = anomalous ? -cfg.cov : cfg.cov;
  Eigen::Matrix2d s;
  s << cfg.var, c, c, cfg.var;
  return s;
}

inline GroupDataset generate(const SyntheticConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const std::size_t total = cfg.n_regular + cfg.n_anomalous;
  GroupDataset ds;
  ds.groups.reserve(total);
  std::vector<bool> labels(total, false);
  const auto n = static_cast<Eigen::Index>(cfg.points_per_group);
  for (std::size_t m = 0; m < total; ++m) {
    const bool anomalous = m >= cfg.n_regular;
    labels[m] = anomalous;
    // Lower Cholesky factor of [[var, c], [c, var]].
    const double c = anomalous ? -cfg.cov : cfg.cov;
    const double l00 = std::sqrt(cfg.var);
    const double l10 = c / l00;
    const double l11 = std::sqrt(cfg.var - l10 * l10);
    const double mu0 = rng.uniform(cfg.mean_low, cfg.mean_high);
    const double mu1 = rng.uniform(cfg.mean_low, cfg.mean_high);
    Matrix g(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e0 = rng.normal();
      const double e1 = rng.normal();
      g(i, 0) = mu0 + l00 * e0;
      g(i, 1) = mu1 + l10 * e0 + l11 * e1;
    }
    ds.groups.emplace_back(std::move(g));
  }
  ds.labels = std::move(labels);
  return ds;
}

/// Same dataset with groups (and labels) permuted under `seed`.
inline GroupDataset shuffled(const GroupDataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> perm(ds.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  GroupDataset out;
  out.groups.reserve(ds.size());
  for (auto p : perm) out.groups.push_back(ds.groups[p]);
  if (ds.labels) {
    std::vector<bool> l(ds.size());
    for (std::size_t i = 0; i < perm.size(); ++i) l[i] = (*ds.labels)[perm[i]];
    out.labels = std::move(l);
  }
  return out;
}

}  // namespace gadk
