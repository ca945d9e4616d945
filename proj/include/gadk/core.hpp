#pragma once

// Group-structured data model: groups of observations, datasets of groups,
// and ranked score tables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gadk {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Errc {
  DimensionMismatch,
  EmptyGroup,
  NonFinite,
  LabelLengthMismatch,
  ParseError,
  InconsistentLabel,
  ShapeMismatch,
  InvalidConfig,
  GraphConsumed,
  UnequalGroupSizes,
  NonConvergent,
  UntrainedModel,
  DegenerateComponent,
  DegenerateData,
  NotPSD,
  LengthMismatch,
  TooFewPoints,
  DomainError,
  SingleClass,
  NoPositives,
  ConfigError,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::NonFinite: return "NonFinite";
    case Errc::LabelLengthMismatch: return "LabelLengthMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::InconsistentLabel: return "InconsistentLabel";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::GraphConsumed: return "GraphConsumed";
    case Errc::UnequalGroupSizes: return "UnequalGroupSizes";
    case Errc::NonConvergent: return "NonConvergent";
    case Errc::UntrainedModel: return "UntrainedModel";
    case Errc::DegenerateComponent: return "DegenerateComponent";
    case Errc::DegenerateData: return "DegenerateData";
    case Errc::NotPSD: return "NotPSD";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::DomainError: return "DomainError";
    case Errc::SingleClass: return "SingleClass";
    case Errc::NoPositives: return "NoPositives";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// One group: n_points observations of dim features, stored row-major.
struct Group {
  Matrix data;

  Group() = default;
  explicit Group(Matrix m) : data(std::move(m)) {}

  std::size_t n_points() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(data.cols()); }

  friend bool operator==(const Group& a, const Group& b) {
    return a.data.rows() == b.data.rows() && a.data.cols() == b.data.cols() &&
           (a.data.array() == b.data.array()).all();
  }
};

/// Ordered groups with optional ground-truth anomaly labels (true = anomalous).
struct GroupDataset {
  std::vector<Group> groups;
  std::optional<std::vector<bool>> labels;

  std::size_t size() const { return groups.size(); }
  std::size_t dim() const { return groups.empty() ? 0 : groups.front().dim(); }
  bool has_labels() const { return labels.has_value(); }

  std::size_t total_points() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.n_points();
    return n;
  }

  /// True when every group has the same number of points.
  bool equal_sizes() const {
    return std::all_of(groups.begin(), groups.end(), [&](const Group& g) {
      return g.n_points() == groups.front().n_points();
    });
  }

  /// Same groups, labels dropped. Fitting code takes this to keep labels out of training.
  GroupDataset unlabeled() const { return GroupDataset{groups, std::nullopt}; }

  friend bool operator==(const GroupDataset& a, const GroupDataset& b) {
    return a.groups == b.groups && a.labels == b.labels;
  }
};

inline void validate_dataset(const GroupDataset& ds) {
  if (ds.groups.empty()) throw Error(Errc::EmptyGroup, "dataset has no groups");
  const auto dim = ds.groups.front().dim();
  if (dim == 0) throw Error(Errc::DimensionMismatch, "groups have zero features");
  for (std::size_t m = 0; m < ds.groups.size(); ++m) {
    const auto& g = ds.groups[m];
    if (g.dim() != dim) {
      throw Error(Errc::DimensionMismatch, "group " + std::to_string(m) + " has dim " +
                                               std::to_string(g.dim()) + ", expected " +
                                               std::to_string(dim));
    }
    if (g.n_points() < 2) {
      throw Error(Errc::EmptyGroup, "group " + std::to_string(m) + " has fewer than 2 points");
    }
    if (!g.data.allFinite()) {
      throw Error(Errc::NonFinite, "group " + std::to_string(m) + " has a non-finite entry");
    }
  }
  if (ds.labels && ds.labels->size() != ds.groups.size()) {
    throw Error(Errc::LabelLengthMismatch, std::to_string(ds.labels->size()) + " labels for " +
                                               std::to_string(ds.groups.size()) + " groups");
  }
}

/// Row-major concatenation of the group's observations.
inline Vector flatten_group(const Group& g) {
  Vector out(g.data.size());
  std::copy(g.data.data(), g.data.data() + g.data.size(), out.data());
  return out;
}

inline Group unflatten_group(std::span<const double> flat, std::size_t n_points, std::size_t dim) {
  if (flat.size() != n_points * dim) {
    throw Error(Errc::ShapeMismatch, "flat length " + std::to_string(flat.size()) +
                                         " != " + std::to_string(n_points) + "x" +
                                         std::to_string(dim));
  }
  Matrix m(static_cast<Eigen::Index>(n_points), static_cast<Eigen::Index>(dim));
  std::copy(flat.begin(), flat.end(), m.data());
  return Group{std::move(m)};
}

/// Rows sorted lexicographically (feature 0 first). Makes a group's matrix a
/// function of its point set rather than of the order the points arrived in.
inline Group canonical_order(const Group& g) {
  const auto n = static_cast<Eigen::Index>(g.n_points());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < g.data.cols(); ++c) {
      if (g.data(a, c) != g.data(b, c)) return g.data(a, c) < g.data(b, c);
    }
    return false;
  });
  Matrix out(g.data.rows(), g.data.cols());
  for (Eigen::Index r = 0; r < n; ++r) out.row(r) = g.data.row(idx[static_cast<std::size_t>(r)]);
  return Group{std::move(out)};
}

/// Per-group anomaly scores plus the descending ranking. Ties rank by
/// ascending group index.
struct ScoreTable {
  std::vector<double> scores;      // indexed by group
  std::vector<std::size_t> order;  // order[rank] = group index

  std::size_t size() const { return scores.size(); }

  /// rank_of()[m] = position of group m in order.
  std::vector<std::size_t> rank_of() const {
    std::vector<std::size_t> r(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) r[order[k]] = k;
    return r;
  }
};

inline ScoreTable make_score_table(std::vector<double> scores) {
  ScoreTable t;
  t.order.resize(scores.size());
  std::iota(t.order.begin(), t.order.end(), std::size_t{0});
  std::stable_sort(t.order.begin(), t.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  t.scores = std::move(scores);
  return t;
}

}  // namespace gadk
