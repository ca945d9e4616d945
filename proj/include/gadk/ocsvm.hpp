#pragma once

// nu-one-class SVM on a precomputed Gram matrix, solved in the dual with
// SMO-style pairwise updates, and the OCSMM pipeline (one-class SVM over
// group mean embeddings).
//
// Dual: min 1/2 a'Ka  s.t.  0 <= a_i <= 1/(nu M),  sum a_i = 1.
// Decision value f(x) = sum_i a_i k(x, x_i); anomaly score = rho - f(x).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "gadk/core.hpp"
#include "gadk/kernel.hpp"

namespace gadk {

struct SvmOptions {
  double tol = 1e-6;                // KKT violation at which to stop
  std::size_t max_iter = 100'000;
  double psd_tol = 1e-8;            // allowed negative eigenvalue of the Gram
  bool check_psd = true;
};

struct SvmSolution {
  std::vector<double> alphas;
  double rho = 0.0;
  double nu = 0.0;
  double upper = 0.0;  // box bound 1/(nu M)
  std::vector<std::size_t> support_indices;
  std::vector<double> decision;  // f(x_i) on the training items
  std::size_t iterations = 0;
  double kkt_violation = 0.0;
  bool rho_from_bound = false;  // no margin SV; rho taken from bound SVs

  double objective(const Matrix& gram) const {
    Eigen::Map<const Vector> a(alphas.data(), static_cast<Eigen::Index>(alphas.size()));
    return 0.5 * a.dot(gram * a);
  }
};

inline SvmSolution ocsvm_fit(const Matrix& gram, double nu, const SvmOptions& opt = {}) {
  const auto m = static_cast<std::size_t>(gram.rows());
  if (gram.rows() != gram.cols() || m == 0) throw Error(Errc::ShapeMismatch, "gram must be square and non-empty");
  if (!(nu > 0.0 && nu <= 1.0)) throw Error(Errc::InvalidConfig, "nu must be in (0, 1]");
  if (!gram.allFinite()) throw Error(Errc::NonFinite, "gram has non-finite entries");
  if ((gram - gram.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw Error(Errc::NotPSD, "gram is not symmetric");
  if (opt.check_psd && m > 1) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -opt.psd_tol) {
      throw Error(Errc::NotPSD, "gram min eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
    }
  }

  SvmSolution sol;
  sol.nu = nu;
  const double c = 1.0 / (nu * static_cast<double>(m));
  sol.upper = c;
  // Feasible start: fill alphas at the upper bound in index order until the
  // simplex constraint is met.
  std::vector<double> a(m, 0.0);
  double remaining = 1.0;
  for (std::size_t i = 0; i < m && remaining > 0.0; ++i) {
    a[i] = std::min(c, remaining);
    remaining -= a[i];
  }
  Eigen::Map<Vector> av(a.data(), static_cast<Eigen::Index>(m));
  Vector grad = gram * av;  // gradient of 1/2 a'Ka, also f(x_i)

  // Bound comparisons use a relative slack so alphas that reach c by
  // clipping count as at-bound.
  const double eps_bound = 1e-12 * c;
  std::size_t iter = 0;
  double violation = 0.0;
  for (; iter < opt.max_iter; ++iter) {
    // i: can increase (a_i < c), smallest gradient. j: can decrease (a_j > 0), largest gradient.
    std::size_t i_up = m, j_down = m;
    double g_min = std::numeric_limits<double>::infinity();
    double g_max = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < m; ++t) {
      if (a[t] < c - eps_bound && grad[static_cast<Eigen::Index>(t)] < g_min) {
        g_min = grad[static_cast<Eigen::Index>(t)];
        i_up = t;
      }
      if (a[t] > eps_bound && grad[static_cast<Eigen::Index>(t)] > g_max) {
        g_max = grad[static_cast<Eigen::Index>(t)];
        j_down = t;
      }
    }
    if (i_up == m || j_down == m) {
      violation = 0.0;
      break;
    }
    violation = g_max - g_min;
    if (violation < opt.tol) break;
    const auto ii = static_cast<Eigen::Index>(i_up);
    const auto jj = static_cast<Eigen::Index>(j_down);
    const double curv = gram(ii, ii) + gram(jj, jj) - 2.0 * gram(ii, jj);
    double delta = curv > 1e-12 ? violation / curv : std::numeric_limits<double>::infinity();
    delta = std::min({delta, c - a[i_up], a[j_down]});
    a[i_up] += delta;
    a[j_down] -= delta;
    grad += delta * (gram.col(ii) - gram.col(jj));
  }
  sol.iterations = iter;
  sol.kkt_violation = violation;

  // Recompute decision values from scratch to shed drift from incremental updates.
  grad = gram * av;
  double free_sum = 0.0;
  std::size_t free_count = 0;
  double bound_max = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < m; ++t) {
    const double g = grad[static_cast<Eigen::Index>(t)];
    if (a[t] > 0.0) sol.support_indices.push_back(t);
    if (a[t] > eps_bound && a[t] < c - eps_bound) {
      free_sum += g;
      ++free_count;
    } else if (a[t] >= c - eps_bound) {
      bound_max = std::max(bound_max, g);
    }
  }
  if (free_count > 0) {
    sol.rho = free_sum / static_cast<double>(free_count);
  } else {
    sol.rho = bound_max;
    sol.rho_from_bound = true;
  }
  sol.alphas = std::move(a);
  sol.decision.assign(grad.data(), grad.data() + grad.size());
  return sol;
}

/// rho - sum_i a_i k(x, x_i) for one item given its kernel row against the training items.
inline double ocsvm_score(const SvmSolution& sol, std::span<const double> gram_row) {
  if (gram_row.size() != sol.alphas.size()) {
    throw Error(Errc::LengthMismatch, "ocsvm_score: kernel row has " + std::to_string(gram_row.size()) +
                                          " entries, solution has " + std::to_string(sol.alphas.size()));
  }
  double f = 0.0;
  for (std::size_t i = 0; i < gram_row.size(); ++i) f += sol.alphas[i] * gram_row[i];
  return sol.rho - f;
}

/// Scores of the training items themselves.
inline ScoreTable ocsvm_training_scores(const SvmSolution& sol) {
  std::vector<double> s(sol.decision.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = sol.rho - sol.decision[i];
  return make_score_table(std::move(s));
}

struct OcsmmOptions {
  std::optional<KernelSpec> kernel;  // median heuristic when empty
  std::size_t bandwidth_max_pairs = 1'000'000;
  std::size_t max_points_per_group = 0;  // 0: use every point in the mean embedding
  std::uint64_t seed = 0;
  SvmOptions svm{};
};

struct OcsmmResult {
  ScoreTable scores;
  SvmSolution solution;
  KernelSpec kernel;
  Matrix gram;
};

/// One-class SVM over group mean embeddings.
inline OcsmmResult ocsmm_pipeline(const GroupDataset& ds, double nu, const OcsmmOptions& opt = {}) {
  validate_dataset(ds);
  OcsmmResult out;
  out.kernel = opt.kernel ? *opt.kernel : KernelSpec{median_bandwidth(ds, opt.bandwidth_max_pairs, opt.seed)};
  const GroupDataset used = subsample_points(ds.unlabeled(), opt.max_points_per_group, opt.seed + 1);
  out.gram = group_gram(used, out.kernel);
  out.solution = ocsvm_fit(out.gram, nu, opt.svm);
  out.scores = ocsvm_training_scores(out.solution);
  return out;
}

}  // namespace gadk
