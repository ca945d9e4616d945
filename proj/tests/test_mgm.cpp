#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "gadk/mgm.hpp"
#include "gadk/synthetic.hpp"
#include "oracles.hpp"

using namespace gadk;
using oracle::code_of;

namespace {

GroupDataset small_data(std::uint64_t seed, std::size_t n = 40) {
  SyntheticConfig cfg;
  cfg.n_regular = 40;
  cfg.n_anomalous = 6;
  cfg.points_per_group = n;
  cfg.seed = seed;
  return generate(cfg);
}

MgmOptions quick(std::size_t types, std::uint64_t seed) {
  MgmOptions o;
  o.types = types;
  o.components = 3;
  o.max_iter = 60;
  o.restarts = 2;
  o.seed = seed;
  return o;
}

// log N(x; mu, S) via the explicit inverse and determinant.
double naive_log_density(const Vector& x, const GaussianComponent& c) {
  const Vector d = x - c.mean;
  const double q = d.dot(c.cov.inverse() * d);
  const double v = static_cast<double>(x.size());
  return -0.5 * (q + std::log(c.cov.determinant()) + v * std::log(2.0 * std::numbers::pi));
}

double naive_group_ll(const MgmModel& model, const Matrix& g) {
  std::vector<double> per_type;
  for (std::size_t t = 0; t < model.types(); ++t) {
    double s = std::log(model.type_weights[t]);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      double p = 0.0;
      for (std::size_t l = 0; l < model.n_components(); ++l) {
        p += model.mixing(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(l)) *
             std::exp(naive_log_density(g.row(i).transpose(), model.components[l]));
      }
      s += std::log(p);
    }
    per_type.push_back(s);
  }
  const double mx = *std::max_element(per_type.begin(), per_type.end());
  double acc = 0.0;
  for (double v : per_type) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

}  // namespace

TEST(Mgm, ObjectiveNonDecreasing) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto model = mgm_fit(small_data(seed).unlabeled(), quick(1 + seed % 2, seed));
    const auto& h = model.objective_history;
    ASSERT_GE(h.size(), 2u);
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_GE(h[i], h[i - 1] - 1e-9) << "seed " << seed << " iter " << i;
  }
}

TEST(Mgm, ParametersAreValid) {
  const auto model = mgm_fit(small_data(1), quick(2, 1));
  ASSERT_EQ(model.types(), 2u);
  ASSERT_EQ(model.n_components(), 3u);
  EXPECT_NEAR(std::accumulate(model.type_weights.begin(), model.type_weights.end(), 0.0), 1.0, 1e-12);
  for (Eigen::Index t = 0; t < 2; ++t) EXPECT_NEAR(model.mixing.row(t).sum(), 1.0, 1e-12);
  for (const auto& c : model.components) {
    EXPECT_LT((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> es(c.cov);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Mgm, GroupLikelihoodMatchesDirectFormula) {
  const auto ds = small_data(2, 12);
  const auto model = mgm_fit(ds, quick(2, 2));
  const auto ll = mgm_group_log_likelihood(model, ds);
  for (std::size_t m = 0; m < ds.size(); ++m) {
    const double want = naive_group_ll(model, ds.groups[m].data);
    EXPECT_NEAR(ll[m], want, 1e-9 * std::abs(want));
  }
  const auto table = mgm_score(model, ds);
  for (std::size_t m = 0; m < ds.size(); ++m) EXPECT_NEAR(table.scores[m], -ll[m] / 12.0, 1e-12);
}

TEST(Mgm, RecordedLikelihoodIsTheFinalOne) {
  const auto ds = small_data(3);
  const auto model = mgm_fit(ds, quick(1, 3));
  const auto ll = mgm_group_log_likelihood(model, ds);
  EXPECT_NEAR(model.log_likelihood, std::accumulate(ll.begin(), ll.end(), 0.0), 1e-7);
}

TEST(Mgm, DeterministicPerSeed) {
  const auto ds = small_data(4);
  const auto a = mgm_fit(ds, quick(1, 7));
  const auto b = mgm_fit(ds, quick(1, 7));
  EXPECT_EQ(a.objective_history, b.objective_history);
  EXPECT_EQ(mgm_score(a, ds).scores, mgm_score(b, ds).scores);
}

TEST(Mgm, SeparatesEasyAnomalies) {
  // Narrow mean box: the rotated covariance is the only signal and it is strong.
  SyntheticConfig cfg;
  cfg.n_regular = 60;
  cfg.n_anomalous = 6;
  cfg.points_per_group = 200;
  cfg.mean_low = -0.1;
  cfg.mean_high = 0.1;
  const auto ds = generate(cfg);
  const auto table = mgm_score(mgm_fit(ds.unlabeled(), quick(1, 1)), ds);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_TRUE((*ds.labels)[table.order[k]]) << "rank " << k;
}

TEST(Mgm, SerializationRoundTrip) {
  const auto ds = small_data(5);
  const auto model = mgm_fit(ds, quick(2, 5));
  const auto back = mgm_from_tensors(mgm_to_tensors(model));
  EXPECT_EQ(back.type_weights, model.type_weights);
  EXPECT_EQ(back.mixing, model.mixing);
  EXPECT_EQ(back.log_likelihood, model.log_likelihood);
  EXPECT_EQ(mgm_score(back, ds).scores, mgm_score(model, ds).scores);
  TensorMap t = mgm_to_tensors(model);
  t.erase("mgm/mixing");
  EXPECT_EQ(code_of([&] { mgm_from_tensors(t); }), Errc::ParseError);
}

TEST(Mgm, Errors) {
  const auto ds = small_data(6, 5);
  auto o = quick(1, 1);
  o.components = 0;
  EXPECT_EQ(code_of([&] { mgm_fit(ds, o); }), Errc::InvalidConfig);
  o = quick(1, 1);
  o.regularization = -1.0;
  EXPECT_EQ(code_of([&] { mgm_fit(ds, o); }), Errc::InvalidConfig);
  const auto model = mgm_fit(ds, quick(1, 1));
  GroupDataset other;
  other.groups.emplace_back(Matrix::Zero(3, 3));
  EXPECT_EQ(code_of([&] { mgm_score(model, other); }), Errc::DimensionMismatch);
}
