#pragma once

// Exact ranking metrics. Higher score = more anomalous = predicted positive.
//
// Ties:
//  - AUROC counts a tied positive/negative pair as 1/2 (Mann-Whitney U).
//  - AUPRC walks tied blocks with TP and FP growing in proportion, so the
//    j-th of p positives in a block with n negatives, entered after TP0 true
//    and FP0 false positives, is credited precision
//        (TP0 + j) / (TP0 + j + FP0 + j*n/p).
//    Without ties this is ordinary average precision.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "gadk/core.hpp"

namespace gadk {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> is_anomaly;

  std::size_t size() const { return scores.size(); }
};

inline LabeledScores labeled(const ScoreTable& table, const std::vector<bool>& labels) {
  if (labels.size() != table.size()) throw Error(Errc::LabelLengthMismatch, "labels do not match scores");
  return LabeledScores{table.scores, labels};
}

namespace detail {

struct TieBlock {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double score = 0.0;
};

/// Tie blocks in descending score order.
inline std::vector<TieBlock> tie_blocks(const LabeledScores& ls) {
  if (ls.scores.size() != ls.is_anomaly.size()) throw Error(Errc::LengthMismatch, "scores and labels differ in length");
  for (double s : ls.scores) {
    if (!std::isfinite(s)) throw Error(Errc::NonFinite, "score is not finite");
  }
  std::vector<std::size_t> idx(ls.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ls.scores[a] > ls.scores[b]; });
  std::vector<TieBlock> blocks;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double s = ls.scores[idx[k]];
    if (blocks.empty() || blocks.back().score != s) blocks.push_back(TieBlock{0, 0, s});
    if (ls.is_anomaly[idx[k]]) {
      ++blocks.back().positives;
    } else {
      ++blocks.back().negatives;
    }
  }
  return blocks;
}

}  // namespace detail

inline double auroc(const LabeledScores& ls) {
  const auto blocks = detail::tie_blocks(ls);
  double pos = 0.0, neg = 0.0;
  for (const auto& b : blocks) {
    pos += static_cast<double>(b.positives);
    neg += static_cast<double>(b.negatives);
  }
  if (pos == 0.0 || neg == 0.0) throw Error(Errc::SingleClass, "AUROC needs both classes");
  // Walk from the lowest scores up, counting negatives already passed.
  double u = 0.0, neg_below = 0.0;
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    const auto p = static_cast<double>(it->positives);
    const auto n = static_cast<double>(it->negatives);
    u += p * neg_below + 0.5 * p * n;
    neg_below += n;
  }
  return u / (pos * neg);
}

inline double auprc(const LabeledScores& ls) {
  const auto blocks = detail::tie_blocks(ls);
  std::size_t total_pos = 0;
  for (const auto& b : blocks) total_pos += b.positives;
  if (total_pos == 0) throw Error(Errc::NoPositives, "AUPRC needs at least one positive");
  double tp0 = 0.0, fp0 = 0.0, sum = 0.0;
  for (const auto& b : blocks) {
    const auto p = static_cast<double>(b.positives);
    const auto n = static_cast<double>(b.negatives);
    for (std::size_t j = 1; j <= b.positives; ++j) {
      const double tp = tp0 + static_cast<double>(j);
      const double fp = fp0 + static_cast<double>(j) * n / p;
      sum += tp / (tp + fp);
    }
    tp0 += p;
    fp0 += n;
  }
  return sum / static_cast<double>(total_pos);
}

struct CurvePoint {
  double x;  // FPR (ROC) or recall (PR)
  double y;  // TPR (ROC) or precision (PR)
  double threshold;
};

/// ROC vertices at each tie-block boundary, starting at (0, 0).
inline std::vector<CurvePoint> roc_curve(const LabeledScores& ls) {
  const auto blocks = detail::tie_blocks(ls);
  double pos = 0.0, neg = 0.0;
  for (const auto& b : blocks) {
    pos += static_cast<double>(b.positives);
    neg += static_cast<double>(b.negatives);
  }
  if (pos == 0.0 || neg == 0.0) throw Error(Errc::SingleClass, "ROC needs both classes");
  std::vector<CurvePoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0.0, fp = 0.0;
  for (const auto& b : blocks) {
    tp += static_cast<double>(b.positives);
    fp += static_cast<double>(b.negatives);
    out.push_back({fp / neg, tp / pos, b.score});
  }
  return out;
}

/// Precision-recall vertices at each tie-block boundary.
inline std::vector<CurvePoint> pr_curve(const LabeledScores& ls) {
  const auto blocks = detail::tie_blocks(ls);
  double pos = 0.0;
  for (const auto& b : blocks) pos += static_cast<double>(b.positives);
  if (pos == 0.0) throw Error(Errc::NoPositives, "PR curve needs at least one positive");
  std::vector<CurvePoint> out;
  double tp = 0.0, fp = 0.0;
  for (const auto& b : blocks) {
    tp += static_cast<double>(b.positives);
    fp += static_cast<double>(b.negatives);
    out.push_back({tp / pos, tp / (tp + fp), b.score});
  }
  return out;
}

}  // namespace gadk
