#pragma once

// RBF kernels on points and on groups (empirical mean embeddings), and the
// median heuristic for the bandwidth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gadk/core.hpp"
#include "gadk/random.hpp"

namespace gadk {

/// k(x, y) = exp(-||x - y||^2 / bandwidth).
struct KernelSpec {
  double bandwidth = 1.0;
};

inline void validate(const KernelSpec& spec) {
  if (!(spec.bandwidth > 0.0) || !std::isfinite(spec.bandwidth)) {
    throw Error(Errc::InvalidConfig, "kernel bandwidth must be positive and finite");
  }
}

template <typename A, typename B>
double rbf_kernel(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y, const KernelSpec& spec) {
  if (x.size() != y.size()) throw Error(Errc::DimensionMismatch, "rbf_kernel: vectors differ in length");
  double d2 = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double d = x(k) - y(k);
    d2 += d * d;
  }
  return std::exp(-d2 / spec.bandwidth);
}

/// Median of `v` (mean of the two middle values for even length). Reorders v.
inline double median_inplace(std::vector<double>& v) {
  if (v.empty()) throw Error(Errc::DegenerateData, "median of empty set");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double hi = *mid;
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

/// Median squared Euclidean distance over observation pairs pooled across all
/// groups. Uses every pair when there are at most `max_pairs`, otherwise
/// `max_pairs` pairs drawn uniformly (with replacement) under `seed`.
inline double median_bandwidth(const GroupDataset& ds, std::size_t max_pairs = 1'000'000,
                               std::uint64_t seed = 0) {
  std::vector<const double*> rows;
  rows.reserve(ds.total_points());
  const auto dim = static_cast<Eigen::Index>(ds.dim());
  for (const auto& g : ds.groups) {
    if (static_cast<Eigen::Index>(g.dim()) != dim) {
      throw Error(Errc::DimensionMismatch, "median_bandwidth: groups differ in dim");
    }
    for (Eigen::Index i = 0; i < g.data.rows(); ++i) rows.push_back(g.data.row(i).data());
  }
  const std::size_t n = rows.size();
  if (n < 2) throw Error(Errc::DegenerateData, "median_bandwidth needs at least two observations");
  auto sqdist = [dim](const double* a, const double* b) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < dim; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
  };
  const long double total_pairs = static_cast<long double>(n) * static_cast<long double>(n - 1) / 2.0L;
  std::vector<double> d;
  if (max_pairs == 0 || total_pairs <= static_cast<long double>(max_pairs)) {
    d.reserve(static_cast<std::size_t>(total_pairs));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) d.push_back(sqdist(rows[i], rows[j]));
    }
  } else {
    Rng rng(seed);
    d.reserve(max_pairs);
    while (d.size() < max_pairs) {
      const auto i = rng.below(n);
      const auto j = rng.below(n);
      if (i != j) d.push_back(sqdist(rows[i], rows[j]));
    }
  }
  const double med = median_inplace(d);
  if (!(med > 0.0)) throw Error(Errc::DegenerateData, "median squared distance is zero");
  return med;
}

/// (1 / (N_i N_j)) sum_{a,b} k(x_a, y_b): inner product of empirical mean embeddings.
inline double mean_map_kernel(const Group& gi, const Group& gj, const KernelSpec& spec) {
  if (gi.dim() != gj.dim()) throw Error(Errc::DimensionMismatch, "mean_map_kernel: groups differ in dim");
  const auto& a = gi.data;
  const auto& b = gj.data;
  // ||x - y||^2 = ||x||^2 + ||y||^2 - 2 x.y, clamped at zero against rounding.
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::RowVectorXd nb = b.rowwise().squaredNorm().transpose();
  Matrix d2 = -2.0 * (a * b.transpose());
  d2.colwise() += na;
  d2.rowwise() += nb;
  const double inv_h = -1.0 / spec.bandwidth;
  const double s = (d2.array().max(0.0) * inv_h).exp().sum();
  return s / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

/// Symmetric M×M matrix of mean_map_kernel values.
inline Matrix group_gram(const GroupDataset& ds, const KernelSpec& spec) {
  validate(spec);
  const auto m = static_cast<Eigen::Index>(ds.size());
  Matrix k(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i; j < m; ++j) {
      const double v = mean_map_kernel(ds.groups[static_cast<std::size_t>(i)],
                                       ds.groups[static_cast<std::size_t>(j)], spec);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// Gram matrix between rows of `x` (one item per row).
inline Matrix point_gram(const Matrix& x, const KernelSpec& spec) {
  validate(spec);
  const auto n = x.rows();
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = rbf_kernel(x.row(i), x.row(j), spec);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// Each group replaced by a seeded subsample of at most `max_points` rows
/// (without replacement). Groups at or under the cap are kept whole.
inline GroupDataset subsample_points(const GroupDataset& ds, std::size_t max_points, std::uint64_t seed) {
  if (max_points == 0) return ds;
  Rng rng(seed);
  GroupDataset out;
  out.labels = ds.labels;
  out.groups.reserve(ds.size());
  for (const auto& g : ds.groups) {
    if (g.n_points() <= max_points) {
      out.groups.push_back(g);
      continue;
    }
    std::vector<std::size_t> idx(g.n_points());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Partial Fisher-Yates: first max_points entries are the sample.
    for (std::size_t i = 0; i < max_points; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    Matrix s(static_cast<Eigen::Index>(max_points), g.data.cols());
    for (std::size_t i = 0; i < max_points; ++i) {
      s.row(static_cast<Eigen::Index>(i)) = g.data.row(static_cast<Eigen::Index>(idx[i]));
    }
    out.groups.emplace_back(std::move(s));
  }
  return out;
}

}  // namespace gadk
