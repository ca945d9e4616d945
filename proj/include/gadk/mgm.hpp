#pragma once

// Mixture of Gaussian mixtures. Each group draws a type t ~ Categorical(pi);
// each of its points draws a component l ~ Categorical(theta_t) from L
// Gaussians shared by all types. Fitted by EM with a per-group latent type and
// a per-point latent component.
//
// Covariances carry a fixed inverse-Wishart-style penalty
//   -1/2 * c * tr(Sigma_l^{-1})
// whose exact M-step is Sigma_l = (S_l + c I) / n_l, so EM increases the
// penalized log-likelihood monotonically; that objective is what the
// per-iteration history records.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "gadk/core.hpp"
#include "gadk/io.hpp"
#include "gadk/kmeans.hpp"
#include "gadk/random.hpp"

namespace gadk {

struct MgmOptions {
  std::size_t types = 1;       // T
  std::size_t components = 3;  // L
  std::size_t max_iter = 200;
  double tol = 1e-6;           // stop when objective gain per observation < tol
  std::size_t restarts = 5;
  double regularization = 1e-6;  // ridge as a fraction of trace(pooled cov)/V
  std::uint64_t seed = 0;
};

struct GaussianComponent {
  Vector mean;
  Matrix cov;
};

struct MgmModel {
  std::vector<double> type_weights;          // pi, length T
  Matrix mixing;                             // T × L, rows sum to 1
  std::vector<GaussianComponent> components; // L
  std::vector<double> objective_history;     // penalized log-likelihood per iteration
  double log_likelihood = 0.0;               // unpenalized, at the final parameters
  double penalty_scale = 0.0;                // c

  std::size_t types() const { return type_weights.size(); }
  std::size_t n_components() const { return components.size(); }
  std::size_t dim() const { return components.empty() ? 0 : static_cast<std::size_t>(components.front().mean.size()); }
};

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

/// log N(x_i; mean, cov) for every row of `x` into column `col` of `out`.
inline void gaussian_log_density(const Matrix& x, const GaussianComponent& comp, Matrix& out,
                                 Eigen::Index col) {
  Eigen::LLT<Eigen::MatrixXd> llt(comp.cov);
  if (llt.info() != Eigen::Success) throw Error(Errc::DegenerateComponent, "covariance is not positive definite");
  const Eigen::MatrixXd& l = llt.matrixL();
  const auto v = x.cols();
  double log_det = 0.0;
  for (Eigen::Index j = 0; j < v; ++j) log_det += 2.0 * std::log(l(j, j));
  const double base = -0.5 * (static_cast<double>(v) * std::log(2.0 * std::numbers::pi) + log_det);
  const Matrix prec = llt.solve(Matrix::Identity(v, v));
  std::vector<double> d(static_cast<std::size_t>(v));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i).data();
    for (Eigen::Index j = 0; j < v; ++j) d[static_cast<std::size_t>(j)] = xi[j] - comp.mean[j];
    double q = 0.0;
    for (Eigen::Index a = 0; a < v; ++a) {
      double r = 0.0;
      for (Eigen::Index b = 0; b < v; ++b) r += prec(a, b) * d[static_cast<std::size_t>(b)];
      q += d[static_cast<std::size_t>(a)] * r;
    }
    out(i, col) = base - 0.5 * q;
  }
}

struct EmState {
  Matrix log_dens;           // N × L, log N(x_i; mu_l, Sigma_l)
  std::vector<double> group_ll;  // log p(G_m)
  Matrix log_type_ll;        // M × T, log pi_t + sum_i log sum_l theta_tl N_il
  Matrix point_lse;          // N × T, log sum_l theta_tl N_il
};

/// Evaluates log-densities and per-group type log-likelihoods.
inline EmState e_step(const Matrix& pooled, const std::vector<std::size_t>& offsets, const MgmModel& model) {
  const auto n = pooled.rows();
  const auto l_count = static_cast<Eigen::Index>(model.n_components());
  const auto t_count = static_cast<Eigen::Index>(model.types());
  const std::size_t m_count = offsets.size() - 1;
  EmState st;
  st.log_dens.resize(n, l_count);
  for (Eigen::Index l = 0; l < l_count; ++l) {
    gaussian_log_density(pooled, model.components[static_cast<std::size_t>(l)], st.log_dens, l);
  }
  Matrix log_theta = model.mixing.array().log().matrix();
  st.log_type_ll.resize(static_cast<Eigen::Index>(m_count), t_count);
  st.group_ll.resize(m_count);
  st.point_lse.resize(n, t_count);
  std::vector<double> buf(static_cast<std::size_t>(l_count));
  std::vector<double> tbuf(static_cast<std::size_t>(t_count));
  for (std::size_t m = 0; m < m_count; ++m) {
    for (Eigen::Index t = 0; t < t_count; ++t) {
      long double acc = 0.0L;
      for (auto i = static_cast<Eigen::Index>(offsets[m]); i < static_cast<Eigen::Index>(offsets[m + 1]); ++i) {
        for (Eigen::Index l = 0; l < l_count; ++l) buf[static_cast<std::size_t>(l)] = log_theta(t, l) + st.log_dens(i, l);
        const double lse = log_sum_exp(buf.data(), buf.size());
        st.point_lse(i, t) = lse;
        acc += lse;
      }
      const double v = std::log(model.type_weights[static_cast<std::size_t>(t)]) + static_cast<double>(acc);
      st.log_type_ll(static_cast<Eigen::Index>(m), t) = v;
      tbuf[static_cast<std::size_t>(t)] = v;
    }
    st.group_ll[m] = log_sum_exp(tbuf.data(), tbuf.size());
  }
  return st;
}

inline double penalty(const MgmModel& model) {
  double p = 0.0;
  for (const auto& c : model.components) p += c.cov.inverse().trace();
  return -0.5 * model.penalty_scale * p;
}

inline double total_ll(const EmState& st) {
  long double s = 0.0L;
  for (double v : st.group_ll) s += v;
  return static_cast<double>(s);
}

/// One M-step from the responsibilities implied by `st`.
inline MgmModel m_step(const Matrix& pooled, const std::vector<std::size_t>& offsets, const MgmModel& prev,
                       const EmState& st) {
  const auto n = pooled.rows();
  const auto l_count = static_cast<Eigen::Index>(prev.n_components());
  const auto t_count = static_cast<Eigen::Index>(prev.types());
  const std::size_t m_count = offsets.size() - 1;
  Matrix log_theta = prev.mixing.array().log().matrix();

  MgmModel next;
  next.penalty_scale = prev.penalty_scale;
  std::vector<long double> type_mass(static_cast<std::size_t>(t_count), 0.0L);
  Matrix mix_num = Matrix::Zero(t_count, l_count);
  Matrix w(n, l_count);  // point-component weights summed over types
  w.setZero();
  for (std::size_t m = 0; m < m_count; ++m) {
    const double gll = st.group_ll[m];
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const double r = std::exp(st.log_type_ll(static_cast<Eigen::Index>(m), t) - gll);
      type_mass[static_cast<std::size_t>(t)] += r;
      if (r == 0.0) continue;
      for (auto i = static_cast<Eigen::Index>(offsets[m]); i < static_cast<Eigen::Index>(offsets[m + 1]); ++i) {
        const double lse = st.point_lse(i, t);
        for (Eigen::Index l = 0; l < l_count; ++l) {
          const double gamma = r * std::exp(log_theta(t, l) + st.log_dens(i, l) - lse);
          w(i, l) += gamma;
          mix_num(t, l) += gamma;
        }
      }
    }
  }
  next.type_weights.resize(static_cast<std::size_t>(t_count));
  for (Eigen::Index t = 0; t < t_count; ++t) {
    next.type_weights[static_cast<std::size_t>(t)] = static_cast<double>(type_mass[static_cast<std::size_t>(t)]) / static_cast<double>(m_count);
  }
  next.mixing = mix_num;
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const double s = mix_num.row(t).sum();
    if (s > 0.0) {
      next.mixing.row(t) /= s;
    } else {
      next.mixing.row(t) = prev.mixing.row(t);  // type lost all groups; keep its mixture
    }
  }
  next.components.resize(static_cast<std::size_t>(l_count));
  const Vector nl_all = w.colwise().sum().transpose();
  const Matrix means = pooled.transpose() * w;  // V × L, unnormalized
  for (Eigen::Index l = 0; l < l_count; ++l) {
    const double nl = nl_all[l];
    if (!(nl > 1e-12)) throw Error(Errc::DegenerateComponent, "component " + std::to_string(l) + " lost all mass");
    Vector mean = means.col(l) / nl;
    const auto v = pooled.cols();
    Matrix scatter = Matrix::Zero(v, v);
    std::vector<double> d(static_cast<std::size_t>(v));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double wi = w(i, l);
      const double* xi = pooled.row(i).data();
      for (Eigen::Index j = 0; j < v; ++j) d[static_cast<std::size_t>(j)] = xi[j] - mean[j];
      for (Eigen::Index a = 0; a < v; ++a) {
        const double wa = wi * d[static_cast<std::size_t>(a)];
        for (Eigen::Index b = 0; b <= a; ++b) scatter(a, b) += wa * d[static_cast<std::size_t>(b)];
      }
    }
    scatter.triangularView<Eigen::StrictlyUpper>() = scatter.transpose();
    scatter.diagonal().array() += next.penalty_scale;
    Matrix cov = scatter / nl;
    cov = 0.5 * (cov + cov.transpose());
    next.components[static_cast<std::size_t>(l)] = GaussianComponent{std::move(mean), std::move(cov)};
  }
  return next;
}

inline MgmModel initial_model(const Matrix& pooled, const std::vector<std::size_t>& offsets,
                              const MgmOptions& opt, double penalty_scale, Rng& rng) {
  const auto n = pooled.rows();
  const auto v = pooled.cols();
  const auto l_count = static_cast<Eigen::Index>(opt.components);
  const auto t_count = static_cast<Eigen::Index>(opt.types);
  const std::size_t m_count = offsets.size() - 1;
  // Component means from k-means (k-means++ seeded) on the pooled points;
  // covariances from the resulting clusters.
  const Codebook cb = kmeans(pooled, opt.components, 20, rng.next_u64());
  std::vector<std::size_t> assign(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) assign[static_cast<std::size_t>(i)] = cb.nearest(pooled.row(i).data()).first;
  MgmModel model;
  model.penalty_scale = penalty_scale;
  model.components.resize(opt.components);
  for (Eigen::Index l = 0; l < l_count; ++l) {
    Vector mean = cb.centroids.row(l).transpose();
    Matrix scatter = Matrix::Zero(v, v);
    double count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (assign[static_cast<std::size_t>(i)] != static_cast<std::size_t>(l)) continue;
      const Vector d = pooled.row(i).transpose() - mean;
      scatter += d * d.transpose();
      count += 1.0;
    }
    scatter.diagonal().array() += penalty_scale;
    model.components[static_cast<std::size_t>(l)] = GaussianComponent{mean, scatter / std::max(count, 1.0)};
  }
  // Mixing rows: each group assigned to a random type; a type's row is the
  // average of its groups' component soft counts (uniform if it got none).
  model.type_weights.assign(opt.types, 1.0 / static_cast<double>(opt.types));
  model.mixing = Matrix::Constant(t_count, l_count, 1.0 / static_cast<double>(opt.components));
  Matrix dens(n, l_count);
  for (Eigen::Index l = 0; l < l_count; ++l) gaussian_log_density(pooled, model.components[static_cast<std::size_t>(l)], dens, l);
  Matrix sums = Matrix::Zero(t_count, l_count);
  std::vector<double> buf(static_cast<std::size_t>(l_count));
  for (std::size_t m = 0; m < m_count; ++m) {
    const auto t = static_cast<Eigen::Index>(rng.below(opt.types));
    for (auto i = static_cast<Eigen::Index>(offsets[m]); i < static_cast<Eigen::Index>(offsets[m + 1]); ++i) {
      for (Eigen::Index l = 0; l < l_count; ++l) buf[static_cast<std::size_t>(l)] = dens(i, l);
      const double lse = log_sum_exp(buf.data(), buf.size());
      for (Eigen::Index l = 0; l < l_count; ++l) sums(t, l) += std::exp(buf[static_cast<std::size_t>(l)] - lse);
    }
  }
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const double s = sums.row(t).sum();
    if (s > 0.0) model.mixing.row(t) = sums.row(t) / s;
  }
  // Keep every mixing weight strictly positive so log(theta) stays finite.
  model.mixing = (model.mixing.array() + 1e-6).matrix();
  for (Eigen::Index t = 0; t < t_count; ++t) model.mixing.row(t) /= model.mixing.row(t).sum();
  return model;
}

inline std::vector<std::size_t> group_offsets(const GroupDataset& ds) {
  std::vector<std::size_t> off{0};
  for (const auto& g : ds.groups) off.push_back(off.back() + g.n_points());
  return off;
}

}  // namespace detail

inline MgmModel mgm_fit(const GroupDataset& ds, const MgmOptions& opt) {
  if (opt.types < 1 || opt.components < 1) throw Error(Errc::InvalidConfig, "T and L must be >= 1");
  if (opt.restarts < 1 || opt.max_iter < 1) throw Error(Errc::InvalidConfig, "restarts and max_iter must be >= 1");
  if (opt.regularization < 0.0) throw Error(Errc::InvalidConfig, "regularization must be >= 0");
  validate_dataset(ds);
  const Matrix pooled = pool_points(ds);
  const auto offsets = detail::group_offsets(ds);
  const auto n = static_cast<double>(pooled.rows());
  const auto v = static_cast<double>(pooled.cols());

  const Vector pooled_mean = pooled.colwise().mean().transpose();
  const double pooled_trace = (pooled.rowwise() - pooled_mean.transpose()).squaredNorm() / n;
  const double penalty_scale = opt.regularization * pooled_trace / v * (n / static_cast<double>(opt.components));

  Rng rng(opt.seed);
  MgmModel best;
  double best_obj = -std::numeric_limits<double>::infinity();
  std::optional<Error> last_error;
  for (std::size_t r = 0; r < opt.restarts; ++r) {
    Rng restart_rng = rng.split();
    try {
      MgmModel model = detail::initial_model(pooled, offsets, opt, penalty_scale, restart_rng);
      std::vector<double> history;
      auto st = detail::e_step(pooled, offsets, model);
      double obj = detail::total_ll(st) + detail::penalty(model);
      history.push_back(obj);
      for (std::size_t it = 0; it < opt.max_iter; ++it) {
        MgmModel next = detail::m_step(pooled, offsets, model, st);
        auto next_st = detail::e_step(pooled, offsets, next);
        const double next_obj = detail::total_ll(next_st) + detail::penalty(next);
        if (!std::isfinite(next_obj)) throw Error(Errc::DegenerateComponent, "objective became non-finite");
        model = std::move(next);
        st = std::move(next_st);
        history.push_back(next_obj);
        const double gain = next_obj - obj;
        obj = next_obj;
        if (gain / n < opt.tol) break;
      }
      model.objective_history = std::move(history);
      model.log_likelihood = detail::total_ll(st);
      if (obj > best_obj) {
        best_obj = obj;
        best = std::move(model);
      }
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateComponent) throw;
      last_error = e;
    }
  }
  if (!std::isfinite(best_obj)) {
    throw last_error ? *last_error : Error(Errc::DegenerateComponent, "every restart degenerated");
  }
  return best;
}

/// log p(G_m) for each group under the fitted model.
inline std::vector<double> mgm_group_log_likelihood(const MgmModel& model, const GroupDataset& ds) {
  for (const auto& g : ds.groups) {
    if (g.dim() != model.dim()) {
      throw Error(Errc::DimensionMismatch, "group dim " + std::to_string(g.dim()) + " vs model dim " +
                                               std::to_string(model.dim()));
    }
  }
  const Matrix pooled = pool_points(ds);
  return detail::e_step(pooled, detail::group_offsets(ds), model).group_ll;
}

/// s_m = -(1/N_m) log p(G_m).
inline ScoreTable mgm_score(const MgmModel& model, const GroupDataset& ds) {
  auto ll = mgm_group_log_likelihood(model, ds);
  std::vector<double> s(ll.size());
  for (std::size_t m = 0; m < s.size(); ++m) s[m] = -ll[m] / static_cast<double>(ds.groups[m].n_points());
  return make_score_table(std::move(s));
}

inline TensorMap mgm_to_tensors(const MgmModel& model) {
  TensorMap t;
  t["mgm/type_weights"] = Eigen::Map<const Matrix>(model.type_weights.data(), 1,
                                                   static_cast<Eigen::Index>(model.type_weights.size()));
  t["mgm/mixing"] = model.mixing;
  for (std::size_t l = 0; l < model.components.size(); ++l) {
    t["mgm/component/" + std::to_string(l) + "/mean"] = model.components[l].mean.transpose();
    t["mgm/component/" + std::to_string(l) + "/cov"] = model.components[l].cov;
  }
  Matrix meta(1, 2);
  meta << model.log_likelihood, model.penalty_scale;
  t["mgm/meta"] = meta;
  return t;
}

inline MgmModel mgm_from_tensors(const TensorMap& t) {
  auto need = [&](const std::string& name) -> const Matrix& {
    auto it = t.find(name);
    if (it == t.end()) throw Error(Errc::ParseError, "checkpoint lacks " + name);
    return it->second;
  };
  MgmModel model;
  const Matrix& w = need("mgm/type_weights");
  model.type_weights.assign(w.data(), w.data() + w.size());
  model.mixing = need("mgm/mixing");
  for (Eigen::Index l = 0; l < model.mixing.cols(); ++l) {
    model.components.push_back(GaussianComponent{
        need("mgm/component/" + std::to_string(l) + "/mean").row(0).transpose(),
        need("mgm/component/" + std::to_string(l) + "/cov")});
  }
  const Matrix& meta = need("mgm/meta");
  model.log_likelihood = meta(0, 0);
  model.penalty_scale = meta(0, 1);
  return model;
}

}  // namespace gadk
