#include <cmath>

#include <gtest/gtest.h>

#include "gadk/nn.hpp"
#include "oracles.hpp"

using namespace gadk;
using namespace gadk::nn;

namespace {

Tensor random_tensor(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  return t;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::Zero(a.rows(), b.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < a.cols(); ++i) s += a(r, i) * b(i, c);
      out(r, c) = s;
    }
  }
  return out;
}

}  // namespace

TEST(Dense, IdentityWeights) {
  Graph g;
  Tensor x(1, 2), w(2, 2), b = Tensor::Zero(1, 2);
  x << 1, 2;
  w << 1, 0, 0, 1;
  const auto y = dense(g.constant(x), g.constant(w), g.constant(b));
  EXPECT_EQ(g.value(y), x);
}

TEST(Dense, HandArithmetic) {
  Graph g;
  Tensor x(1, 2), w(2, 1), b(1, 1);
  x << 1, 1;
  w << 2, 3;
  b << 1;
  EXPECT_EQ(g.scalar(dense(g.constant(x), g.constant(w), g.constant(b))), 6.0);
}

TEST(Dense, MatchesNaiveMatmul) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto bsz = static_cast<Eigen::Index>(1 + rng.below(7));
    const auto in = static_cast<Eigen::Index>(1 + rng.below(9));
    const auto out = static_cast<Eigen::Index>(1 + rng.below(9));
    const Tensor x = random_tensor(bsz, in, rng), w = random_tensor(in, out, rng), b = random_tensor(1, out, rng);
    Graph g;
    const Tensor y = g.value(dense(g.constant(x), g.constant(w), g.constant(b)));
    Tensor want = naive_matmul(x, w);
    for (Eigen::Index r = 0; r < bsz; ++r) want.row(r) += b.row(0);
    EXPECT_LT((y - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Dense, ShapeMismatch) {
  Graph g;
  try {
    dense(g.constant(Tensor::Zero(1, 3)), g.constant(Tensor::Zero(2, 2)), g.constant(Tensor::Zero(1, 2)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Elu, ClosedForms) {
  Graph g;
  Tensor x(1, 3);
  x << 0.0, -1.0, -700.0;
  const Tensor y = g.value(elu(g.constant(x)));
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_NEAR(y(0, 1), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(y(0, 2), -1.0, 1e-15);
  EXPECT_NEAR(y(0, 1), -0.6321, 1e-4);
}

TEST(Elu, DerivativeMatchesDifferences) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    double x = rng.uniform(-4, 4);
    if (std::abs(x) < 1e-3) x = 0.5;
    ParamSet ps;
    auto& p = ps.add("x", Tensor::Constant(1, 1, x));
    const double alpha = rng.uniform(0.5, 2.0);
    Graph g;
    g.backward(sum(elu(g.param(p), alpha)));
    const double h = 1e-6;
    auto f = [&](double v) { return v > 0 ? v : alpha * std::expm1(v); };
    EXPECT_NEAR(p.grad(0, 0), (f(x + h) - f(x - h)) / (2 * h), 1e-6);
  }
}

TEST(Sigmoid, Identities) {
  Rng rng(3);
  Graph g;
  Tensor x(1, 40);
  for (Eigen::Index i = 0; i < 40; ++i) x(0, i) = rng.uniform(-20, 20);
  Tensor nx = -x;
  const Tensor a = g.value(sigmoid(g.constant(x)));
  const Tensor b = g.value(sigmoid(g.constant(nx)));
  EXPECT_LT((a + b - Tensor::Ones(1, 40)).cwiseAbs().maxCoeff(), 1e-12);
  Graph h;
  Tensor z(1, 3);
  z << 0.0, 50.0, -50.0;
  const Tensor s = h.value(sigmoid(h.constant(z)));
  EXPECT_EQ(s(0, 0), 0.5);
  EXPECT_GT(s(0, 2), 0.0);
  // 1 / (1 + e^50) in long double
  const long double want = 1.0L / (1.0L + std::exp(50.0L));
  EXPECT_NEAR(static_cast<long double>(s(0, 2)) / want, 1.0L, 1e-12L);
  EXPECT_TRUE(s.allFinite());
}

TEST(LogSigmoid, StableTails) {
  EXPECT_NEAR(stable_log_sigmoid(-800.0), -800.0, 1e-12);
  EXPECT_NEAR(stable_log_sigmoid(800.0), 0.0, 1e-300);
  EXPECT_NEAR(stable_log_sigmoid(0.0), -std::log(2.0), 1e-15);
}

TEST(Reparam, Cases) {
  Rng rng(4);
  const Tensor mu = random_tensor(2, 3, rng), ls = random_tensor(2, 3, rng), noise = random_tensor(2, 3, rng);
  Graph g;
  EXPECT_EQ(g.value(reparam_sample(g.constant(mu), g.constant(ls), Tensor::Zero(2, 3))), mu);
  const Tensor unit = g.value(reparam_sample(g.constant(mu), g.constant(Tensor::Zero(2, 3)), noise));
  EXPECT_LT((unit - (mu + noise)).cwiseAbs().maxCoeff(), 1e-15);
  try {
    reparam_sample(g.constant(mu), g.constant(ls), Tensor::Zero(3, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Reparam, MonteCarloMoments) {
  Rng rng(5);
  const int n = 100000;
  Tensor noise(n, 1);
  for (int i = 0; i < n; ++i) noise(i, 0) = rng.normal();
  Graph g;
  const double m = 0.7, ls = -0.4;
  const Tensor z = g.value(reparam_sample(g.constant(Tensor::Constant(n, 1, m)),
                                          g.constant(Tensor::Constant(n, 1, ls)), noise));
  const double mean = z.mean();
  const double sd = std::sqrt((z.array() - mean).square().sum() / (n - 1));
  EXPECT_NEAR(mean, m, 0.02);
  EXPECT_NEAR(sd, std::exp(ls), 0.02);
}

TEST(Backward, LinearCase) {
  Rng rng(6);
  ParamSet ps;
  auto& w = ps.add("W", random_tensor(3, 2, rng));
  auto& b = ps.add("b", Tensor::Zero(1, 2));
  const Tensor x = random_tensor(4, 3, rng);
  Graph g;
  g.backward(sum(dense(g.constant(x), g.param(w), g.param(b))));
  // d/dW_ic sum_r (x W)_rc = sum_r x_ri
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index c = 0; c < 2; ++c) EXPECT_NEAR(w.grad(i, c), x.col(i).sum(), 1e-12);
  }
  EXPECT_EQ(b.grad, Tensor::Constant(1, 2, 4.0));
}

TEST(Backward, IndependentLossGivesZero) {
  ParamSet ps;
  auto& w = ps.add("W", Tensor::Ones(2, 2));
  Graph g;
  g.param(w);
  const auto other = g.constant(Tensor::Ones(1, 1));
  g.backward(sum(other));
  EXPECT_TRUE(w.grad.isZero());
}

TEST(Backward, SecondCallThrows) {
  ParamSet ps;
  auto& w = ps.add("W", Tensor::Ones(1, 1));
  Graph g;
  const auto l = sum(g.param(w));
  g.backward(l);
  try {
    g.backward(l);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::GraphConsumed);
  }
}

TEST(Backward, NonScalarLossRejected) {
  Graph g;
  try {
    g.backward(g.constant(Tensor::Ones(2, 1)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Backward, Deterministic) {
  Rng rng(7);
  ParamSet ps;
  Mlp net(ps, "n", {4, 8, 3}, Activation::Sigmoid, rng);
  const Tensor x = random_tensor(5, 4, rng);
  auto grads = [&] {
    ps.zero_grad();
    Graph g;
    g.backward(mean(square(net.forward(g, g.constant(x)))));
    std::vector<Tensor> out;
    for (const auto& p : ps) out.push_back(p.grad);
    return out;
  };
  EXPECT_EQ(grads(), grads());
}

TEST(Log, DomainError) {
  Graph g;
  try {
    nn::log(g.constant(Tensor::Zero(1, 1)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DomainError);
  }
}

// Random small networks with every activation and op; central differences.
TEST(GradientCheck, RandomNetworks) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ParamSet ps;
    const std::size_t layers = 1 + rng.below(3);
    std::vector<std::size_t> sizes{1 + rng.below(6)};
    for (std::size_t l = 0; l < layers; ++l) sizes.push_back(1 + rng.below(16));
    const auto act = static_cast<Activation>(rng.below(3));
    Mlp net(ps, "net", sizes, act, rng);
    const Tensor x = random_tensor(static_cast<Eigen::Index>(1 + rng.below(4)), static_cast<Eigen::Index>(sizes[0]), rng);
    const Tensor target = random_tensor(x.rows(), static_cast<Eigen::Index>(sizes.back()), rng);
    const Tensor noise = random_tensor(x.rows(), static_cast<Eigen::Index>(sizes.back()), rng);
    const int variant = static_cast<int>(seed % 4);
    auto loss = [&](Graph& g) {
      Var y = net.forward(g, g.constant(x));
      switch (variant) {
        case 0: return mean(square(sub(y, g.constant(target))));
        case 1: return sum(log_sigmoid(y));
        case 2: return mean(row_sum(mul(reparam_sample(y, scale(y, 0.3), noise), y)));
        default: return sum(nn::log(add_scalar(exp(scale(y, 0.5)), 1.0)));
      }
    };
    EXPECT_LT(oracle::max_grad_error(ps, loss), 1e-4) << "seed " << seed;
  }
}

TEST(Adam, ZeroGradient) {
  ParamSet ps;
  auto& p = ps.add("p", Tensor::Constant(1, 1, 2.0));
  p.m(0, 0) = 1.0;
  p.v(0, 0) = 1.0;
  std::vector<Tensor> g{Tensor::Zero(1, 1)};
  adam_step(ps, g, AdamOptions{});
  EXPECT_EQ(ps.step(), 1u);
  EXPECT_NEAR(p.m(0, 0), 0.9, 1e-15);
  EXPECT_NEAR(p.v(0, 0), 0.999, 1e-15);
  // The old moments still move the parameter; with zero moments it stays put.
  ParamSet fresh;
  auto& q = fresh.add("q", Tensor::Constant(1, 1, 2.0));
  adam_step(fresh, g, AdamOptions{});
  EXPECT_EQ(q.value(0, 0), 2.0);
}

TEST(Adam, FirstStepIsLr) {
  for (double grad : {0.5, -3.0, 1e-3}) {
    ParamSet ps;
    auto& p = ps.add("p", Tensor::Zero(1, 1));
    std::vector<Tensor> g{Tensor::Constant(1, 1, grad)};
    AdamOptions opt;
    opt.lr = 0.01;
    adam_step(ps, g, opt);
    EXPECT_NEAR(p.value(0, 0), -0.01 * grad / (std::abs(grad) + 1e-8), 1e-12);
  }
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamSet ps;
  auto& p = ps.add("theta", Tensor::Zero(1, 1));
  AdamOptions opt;
  opt.lr = 0.1;
  for (int i = 0; i < 200; ++i) {
    std::vector<Tensor> g{Tensor::Constant(1, 1, 2.0 * (p.value(0, 0) - 3.0))};
    adam_step(ps, g, opt);
  }
  EXPECT_LT(std::abs(p.value(0, 0) - 3.0), 0.05);
}

TEST(Adam, ShapeMismatch) {
  ParamSet ps;
  ps.add("p", Tensor::Zero(2, 2));
  std::vector<Tensor> g{Tensor::Zero(1, 2)};
  try {
    adam_step(ps, g, AdamOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
  std::vector<Tensor> none;
  EXPECT_THROW(adam_step(ps, none, AdamOptions{}), Error);
}

TEST(Mlp, EvalMatchesGraph) {
  Rng rng(8);
  ParamSet ps;
  Mlp net(ps, "m", {6, 5, 4, 2}, Activation::Sigmoid, rng);
  const Tensor x = random_tensor(3, 6, rng);
  Graph g;
  EXPECT_LT((g.value(net.forward(g, g.constant(x))) - net.eval(x)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(ps.size(), 6u);
  EXPECT_EQ(ps.count_values(), 6u * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
}

TEST(Mlp, FiniteOnLargeInputs) {
  Rng rng(9);
  ParamSet ps;
  Mlp net(ps, "m", {3, 16, 16, 2}, Activation::Sigmoid, rng);
  Tensor x = random_tensor(10, 3, rng);
  x = x.cwiseProduct(Tensor::Constant(10, 3, 1e3)).cwiseMax(-1e3).cwiseMin(1e3);
  EXPECT_TRUE(net.eval(x).allFinite());
}

TEST(Glorot, Bounds) {
  Rng rng(10);
  const Tensor w = glorot_uniform(100, 50, rng);
  const double a = std::sqrt(6.0 / 150.0);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), a);
  EXPECT_GT(w.cwiseAbs().maxCoeff(), 0.9 * a);
}

TEST(Params, ExportImport) {
  Rng rng(11);
  ParamSet a, b;
  Mlp na(a, "m", {3, 4, 2}, Activation::Identity, rng);
  Mlp nb(b, "m", {3, 4, 2}, Activation::Identity, rng);
  TensorMap t;
  export_params(a, t);
  import_params(b, t);
  const Tensor x = random_tensor(2, 3, rng);
  EXPECT_EQ(na.eval(x), nb.eval(x));
  t.erase("m/0/W");
  EXPECT_THROW(import_params(b, t), Error);
}
