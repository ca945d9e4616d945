#pragma once

// k-means (k-means++ seeding, Lloyd iterations) and bag-of-features
// histograms over a learned codebook.

#include <cstdint>
#include <limits>
#include <vector>

#include "gadk/core.hpp"
#include "gadk/random.hpp"

namespace gadk {

struct Codebook {
  Matrix centroids;                // k × V
  std::vector<double> sse_history; // within-cluster SSE after each Lloyd iteration
  std::size_t reseeded = 0;        // empty clusters moved to the farthest point

  std::size_t k() const { return static_cast<std::size_t>(centroids.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(centroids.cols()); }

  /// Index of the nearest centroid (lowest index on ties) and its squared distance.
  std::pair<std::size_t, double> nearest(const double* x) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      double d = 0.0;
      for (Eigen::Index j = 0; j < centroids.cols(); ++j) {
        const double t = x[j] - centroids(c, j);
        d += t * t;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::size_t>(c);
      }
    }
    return {best, best_d};
  }
};

/// Rows of every group stacked into one N × V matrix.
inline Matrix pool_points(const GroupDataset& ds) {
  Matrix out(static_cast<Eigen::Index>(ds.total_points()), static_cast<Eigen::Index>(ds.dim()));
  Eigen::Index r = 0;
  for (const auto& g : ds.groups) {
    out.middleRows(r, g.data.rows()) = g.data;
    r += g.data.rows();
  }
  return out;
}

inline Codebook kmeans(const Matrix& points, std::size_t k, std::size_t max_iter, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1) throw Error(Errc::InvalidConfig, "k must be >= 1");
  if (n < k) throw Error(Errc::TooFewPoints, std::to_string(n) + " points for k=" + std::to_string(k));
  Rng rng(seed);
  Codebook cb;
  cb.centroids.resize(static_cast<Eigen::Index>(k), points.cols());

  // k-means++: first centre uniform, then proportional to squared distance.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    cb.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (points.row(static_cast<Eigen::Index>(i)) - cb.centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = rng.below(n);  // all points coincide with chosen centres
      continue;
    }
    double target = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d2[i];
      if (target < 0.0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<std::size_t> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iter, 1); ++it) {
    // Assignment.
    for (std::size_t i = 0; i < n; ++i) {
      auto [c, d] = cb.nearest(points.row(static_cast<Eigen::Index>(i)).data());
      assign[i] = c;
      dist[i] = d;
    }
    // Update.
    Matrix sums = Matrix::Zero(cb.centroids.rows(), cb.centroids.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += points.row(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    bool changed = false;
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (counts[c] == 0) {
        // Re-seed at the point farthest from its centre, then drop that point's
        // contribution so it is not claimed twice.
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (dist[i] > dist[far]) far = i;
        }
        cb.centroids.row(ci) = points.row(static_cast<Eigen::Index>(far));
        dist[far] = 0.0;
        ++cb.reseeded;
        changed = true;
        continue;
      }
      Eigen::RowVectorXd next = sums.row(ci) / static_cast<double>(counts[c]);
      if ((next - cb.centroids.row(ci)).squaredNorm() > 0.0) changed = true;
      cb.centroids.row(ci) = next;
    }
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sse += (points.row(static_cast<Eigen::Index>(i)) - cb.centroids.row(static_cast<Eigen::Index>(assign[i]))).squaredNorm();
    }
    // SSE of the current assignment under the updated centres; reseeding can
    // only lower it further on the next assignment.
    cb.sse_history.push_back(sse);
    if (!changed) break;
  }
  return cb;
}

/// Within-cluster sum of squares of `points` under nearest-centroid assignment.
inline double within_cluster_sse(const Matrix& points, const Codebook& cb) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) s += cb.nearest(points.row(i).data()).second;
  return s;
}

/// Each group becomes one 1 × k row: the normalized histogram of its points'
/// nearest centroids. The result holds feature vectors, not point groups, so
/// it is not subject to the two-point group minimum.
inline GroupDataset bag_of_features(const GroupDataset& ds, const Codebook& cb) {
  if (ds.dim() != cb.dim()) {
    throw Error(Errc::DimensionMismatch, "codebook dim " + std::to_string(cb.dim()) + " vs data dim " +
                                             std::to_string(ds.dim()));
  }
  GroupDataset out;
  out.labels = ds.labels;
  out.groups.reserve(ds.size());
  for (const auto& g : ds.groups) {
    if (g.dim() != cb.dim()) throw Error(Errc::DimensionMismatch, "group dim differs from codebook");
    Matrix h = Matrix::Zero(1, static_cast<Eigen::Index>(cb.k()));
    for (Eigen::Index i = 0; i < g.data.rows(); ++i) {
      h(0, static_cast<Eigen::Index>(cb.nearest(g.data.row(i).data()).first)) += 1.0;
    }
    h /= static_cast<double>(g.data.rows());
    out.groups.emplace_back(std::move(h));
  }
  return out;
}

/// One row per group (rows of a bag-of-features or flattened dataset).
inline Matrix stack_single_rows(const GroupDataset& ds) {
  Matrix out(static_cast<Eigen::Index>(ds.size()),
             ds.size() == 0 ? 0 : static_cast<Eigen::Index>(ds.groups.front().data.size()));
  for (std::size_t m = 0; m < ds.size(); ++m) {
    const auto& g = ds.groups[m].data;
    if (g.size() != out.cols()) throw Error(Errc::DimensionMismatch, "rows differ in length");
    out.row(static_cast<Eigen::Index>(m)) = Eigen::Map<const Eigen::RowVectorXd>(g.data(), g.size());
  }
  return out;
}

}  // namespace gadk
