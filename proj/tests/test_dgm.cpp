#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "gadk/dgm.hpp"
#include "gadk/synthetic.hpp"
#include "oracles.hpp"

using namespace gadk;

namespace {

using oracle::code_of;

TrainConfig tiny_config(DgmKind kind) {
  TrainConfig cfg;
  cfg.kind = kind;
  cfg.latent_size = 3;
  cfg.encoder_hidden = {16};
  cfg.decoder_hidden = {16};
  cfg.discriminator_hidden = {8};
  cfg.epochs = 5;
  cfg.minibatch_size = 8;
  cfg.learning_rate = 1e-2;
  cfg.seed = 3;
  return cfg;
}

GroupDataset tiny_data(std::uint64_t seed = 1) {
  SyntheticConfig s;
  s.n_regular = 30;
  s.n_anomalous = 4;
  s.points_per_group = 6;
  s.seed = seed;
  return generate(s);
}

}  // namespace

TEST(ReconLoss, Examples) {
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  EXPECT_EQ(recon_loss(Group{a}, Group{b}), 2.0);
  EXPECT_EQ(recon_loss(Group{a}, Group{a}), 0.0);
  EXPECT_EQ(code_of([&] { recon_loss(Group{a}, Group{Matrix::Zero(2, 2)}); }), Errc::ShapeMismatch);
}

TEST(ReconLoss, MatchesLoop) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    Matrix a(5, 3), b(5, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.normal();
      b.data()[i] = rng.normal();
    }
    double want = 0.0;
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 3; ++c) want += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    }
    EXPECT_NEAR(recon_loss(Group{a}, Group{b}), want, 1e-12);
  }
}

TEST(KlTerm, Examples) {
  EXPECT_EQ(kl_term({Vector::Zero(4), Vector::Zero(4)}), 0.0);
  EXPECT_NEAR(kl_term({Vector::Ones(1), Vector::Zero(1)}), 0.5, 1e-15);
  EXPECT_EQ(code_of([] { kl_term({Vector::Zero(2), Vector::Zero(3)}); }), Errc::ShapeMismatch);
}

TEST(KlTerm, MatchesQuadrature) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const double mu = rng.uniform(-2, 2), ls = rng.uniform(-1, 1);
    Vector m(1), l(1);
    m << mu;
    l << ls;
    EXPECT_NEAR(kl_term({m, l}), oracle::kl_quadrature(mu, std::exp(ls)), 1e-6);
  }
}

TEST(KlTerm, SumsOverDimensions) {
  Vector m(2), l(2);
  m << 0.3, -1.2;
  l << 0.1, -0.4;
  const double a = kl_term({m.head(1), l.head(1)}), b = kl_term({m.tail(1), l.tail(1)});
  EXPECT_NEAR(kl_term({m, l}), a + b, 1e-15);
}

TEST(AaeLosses, ValuesAndErrors) {
  const std::vector<double> real{0.5, 0.5}, fake{0.5, 0.5};
  const auto l = aae_losses(real, fake);
  EXPECT_NEAR(l.generator, std::log(0.5), 1e-15);
  EXPECT_NEAR(l.discriminator, -2.0 * std::log(0.5), 1e-15);
  const std::vector<double> one{0.5};
  EXPECT_EQ(code_of([&] { aae_losses(real, one); }), Errc::LengthMismatch);
  const std::vector<double> bad{0.5, 1.0};
  EXPECT_EQ(code_of([&] { aae_losses(real, bad); }), Errc::DomainError);
  const std::vector<double> empty;
  EXPECT_EQ(code_of([&] { aae_losses(empty, empty); }), Errc::LengthMismatch);
}

TEST(Normalizer, ScalesToUnitBox) {
  const auto ds = tiny_data();
  const auto n = Normalizer::fit(ds);
  for (const auto& g : ds.groups) {
    const Matrix s = n.forward(g.data);
    EXPECT_GE(s.minCoeff(), 0.0);
    EXPECT_LE(s.maxCoeff(), 1.0);
    EXPECT_LT((n.inverse(s) - g.data).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Normalizer, ConstantFeatureHasUnitRange) {
  GroupDataset ds;
  ds.groups.emplace_back(Matrix::Constant(3, 1, 2.0));
  const auto n = Normalizer::fit(ds);
  EXPECT_EQ(n.range()[0], 1.0);
  EXPECT_TRUE(n.forward(ds.groups[0].data).isZero());
}

TEST(Train, RejectsUnequalGroups) {
  GroupDataset ds;
  ds.groups = {Group{Matrix::Zero(3, 2)}, Group{Matrix::Ones(4, 2)}};
  EXPECT_EQ(code_of([&] { train(ds, tiny_config(DgmKind::Vae)); }), Errc::UnequalGroupSizes);
}

TEST(Train, RejectsBadConfig) {
  auto cfg = tiny_config(DgmKind::Vae);
  cfg.latent_size = 0;
  EXPECT_EQ(code_of([&] { train(tiny_data(), cfg); }), Errc::InvalidConfig);
  cfg = tiny_config(DgmKind::Vae);
  cfg.dropout = 1.0;
  EXPECT_EQ(code_of([&] { train(tiny_data(), cfg); }), Errc::InvalidConfig);
}

TEST(Reference, UntrainedModel) {
  const auto ds = tiny_data();
  DgmModel model(tiny_config(DgmKind::Vae), 6, 2, Normalizer::fit(ds));
  Rng rng(1);
  EXPECT_EQ(code_of([&] { group_reference(model, ds, rng); }), Errc::UntrainedModel);
}

class TrainBoth : public ::testing::TestWithParam<DgmKind> {};

TEST_P(TrainBoth, TrainsScoresAndIsDeterministic) {
  const auto ds = tiny_data();
  const auto cfg = tiny_config(GetParam());
  const auto a = train(ds.unlabeled(), cfg);
  const auto b = train(ds.unlabeled(), cfg);
  ASSERT_TRUE(a.trained());
  ASSERT_EQ(a.history().size(), cfg.epochs);
  for (const auto& e : a.history()) EXPECT_TRUE(std::isfinite(e.total));
  const auto ta = score_with_model(a, ds, ds, 9);
  const auto tb = score_with_model(b, ds, ds, 9);
  EXPECT_EQ(ta.scores, tb.scores);
  EXPECT_EQ(ta.order, tb.order);
  for (double s : ta.scores) EXPECT_GE(s, 0.0);
}

TEST_P(TrainBoth, CheckpointRoundTrip) {
  const auto ds = tiny_data();
  const auto model = train(ds, tiny_config(GetParam()));
  std::stringstream ss;
  write_tensors(ss, model.to_tensors());
  const auto back = DgmModel::from_tensors(read_tensors(ss));
  EXPECT_EQ(back.kind(), model.kind());
  EXPECT_EQ(back.latent_size(), model.latent_size());
  const Matrix x = model.inputs(ds);
  EXPECT_EQ(back.encode_eval(x).first, model.encode_eval(x).first);
  Vector z = Vector::Constant(3, 0.25);
  EXPECT_EQ(back.decode_latent(z).data, model.decode_latent(z).data);
  EXPECT_EQ(score_with_model(back, ds, ds, 4).scores, score_with_model(model, ds, ds, 4).scores);
}

INSTANTIATE_TEST_SUITE_P(Kinds, TrainBoth, ::testing::Values(DgmKind::Vae, DgmKind::Aae));

TEST(Score, ReferenceShapeMismatch) {
  const auto ds = tiny_data();
  GroupReference ref{Matrix::Zero(5, 2)};
  EXPECT_EQ(code_of([&] { score(ref, ds); }), Errc::ShapeMismatch);
}

TEST(Score, DistanceVariants) {
  Matrix r(2, 1), g(2, 1);
  r << 0, 1;
  g << 3, 2;
  ScoreOptions raw{false, GroupDistance::Frobenius};
  EXPECT_EQ(group_distance(r, g, raw), 9.0 + 1.0);
  ScoreOptions canon{true, GroupDistance::Frobenius};
  EXPECT_EQ(group_distance(r, g, canon), 4.0 + 4.0);
  ScoreOptions centered{true, GroupDistance::CenteredFrobenius};
  EXPECT_NEAR(group_distance(r, g, centered), 0.0, 1e-15);
}

TEST(Score, PermutedGroupScoresTheSame) {
  const auto ds = tiny_data();
  const auto model = train(ds, tiny_config(DgmKind::Vae));
  Rng rng(5);
  const auto ref = group_reference(model, ds, rng);
  GroupDataset perm = ds;
  for (auto& g : perm.groups) g.data = g.data.colwise().reverse().eval();
  EXPECT_EQ(score(ref, ds).scores, score(ref, perm).scores);
}
