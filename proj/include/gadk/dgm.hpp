#pragma once

// Variational and adversarial autoencoders over whole groups, their training
// loops, group-reference construction and distance scoring.
//
// A group enters the encoder as one flattened vector: rows put in canonical
// (lexicographic) order, each feature min-max scaled to [0, 1] with bounds
// taken from the training data, then concatenated row-major. The decoder
// mirrors the encoder and ends in a sigmoid, so reconstructions live in the
// same [0, 1] box and are mapped back to data space for scoring.

#include <cmath>
#include <cstdint>
#include <memory>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gadk/core.hpp"
#include "gadk/io.hpp"
#include "gadk/nn.hpp"
#include "gadk/random.hpp"

namespace gadk {

enum class DgmKind { Vae, Aae };

inline const char* dgm_kind_name(DgmKind k) { return k == DgmKind::Vae ? "vae" : "aae"; }

/// How a group is compared with the reference.
enum class GroupDistance {
  Frobenius,          // ||R - G||^2
  CenteredFrobenius,  // ||(R - mean R) - (G - mean G)||^2, column means removed
};

struct ScoreOptions {
  bool canonical = true;
  GroupDistance distance = GroupDistance::CenteredFrobenius;
};

struct TrainConfig {
  DgmKind kind = DgmKind::Vae;
  std::size_t latent_size = 64;
  std::vector<std::size_t> encoder_hidden{512, 128};
  std::vector<std::size_t> decoder_hidden{128, 512};
  std::vector<std::size_t> discriminator_hidden{64, 16};
  std::size_t epochs = 200;
  std::size_t minibatch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double kl_weight = 1.0;
  double adversarial_weight = 1.0;
  double dropout = 0.0;   // on hidden activations, training only
  double l2_weight = 0.0; // lambda * sum ||W||^2
  std::size_t n_reference_draws = 1;
  ScoreOptions scoring{};
  /// Explicit per-feature [lo, hi] for input scaling; computed from training data when empty.
  std::optional<std::pair<std::vector<double>, std::vector<double>>> normalization;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.latent_size < 1) throw Error(Errc::InvalidConfig, "latent_size must be >= 1");
  if (cfg.minibatch_size < 1) throw Error(Errc::InvalidConfig, "minibatch_size must be >= 1");
  if (cfg.epochs < 1) throw Error(Errc::InvalidConfig, "epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw Error(Errc::InvalidConfig, "learning_rate must be > 0");
  if (cfg.kl_weight < 0.0 || cfg.adversarial_weight < 0.0 || cfg.l2_weight < 0.0) {
    throw Error(Errc::InvalidConfig, "loss weights must be non-negative");
  }
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw Error(Errc::InvalidConfig, "dropout must be in [0, 1)");
  if (cfg.n_reference_draws < 1) throw Error(Errc::InvalidConfig, "n_reference_draws must be >= 1");
}

// ---------------------------------------------------------------------------
// Losses

inline double recon_loss(const Group& g, const Group& g_hat) {
  if (g.data.rows() != g_hat.data.rows() || g.data.cols() != g_hat.data.cols()) {
    throw Error(Errc::ShapeMismatch, "recon_loss: groups differ in shape");
  }
  return (g.data - g_hat.data).squaredNorm();
}

struct EncoderOutput {
  Vector mu;
  Vector log_sigma;
};

/// KL( N(mu, diag sigma^2) || N(0, I) ).
inline double kl_term(const EncoderOutput& enc) {
  if (enc.mu.size() != enc.log_sigma.size()) throw Error(Errc::ShapeMismatch, "kl_term: mu/log_sigma length");
  double s = 0.0;
  for (Eigen::Index k = 0; k < enc.mu.size(); ++k) {
    const double ls = enc.log_sigma[k];
    s += std::exp(2.0 * ls) + enc.mu[k] * enc.mu[k] - 1.0 - 2.0 * ls;
  }
  return 0.5 * s;
}

inline double vae_loss(const Group& g, const Group& g_hat, const EncoderOutput& enc,
                       double kl_weight = 1.0) {
  return recon_loss(g, g_hat) + kl_weight * kl_term(enc);
}

struct AaeLosses {
  double generator;      // (1/M') sum log D(z)
  double discriminator;  // -(1/M') sum [log D(z') + log(1 - D(z))]
};

/// Adversarial losses from discriminator outputs on prior draws (real) and
/// encodings (fake).
inline AaeLosses aae_losses(std::span<const double> real_scores, std::span<const double> fake_scores) {
  if (real_scores.size() != fake_scores.size() || real_scores.empty()) {
    throw Error(Errc::LengthMismatch, "aae_losses: score vectors must share a positive length");
  }
  auto check = [](double s) {
    if (!(s > 0.0 && s < 1.0)) throw Error(Errc::DomainError, "discriminator score outside (0,1)");
  };
  double lg = 0.0, ld = 0.0;
  for (std::size_t m = 0; m < real_scores.size(); ++m) {
    check(real_scores[m]);
    check(fake_scores[m]);
    lg += std::log(fake_scores[m]);
    ld += std::log(real_scores[m]) + std::log1p(-fake_scores[m]);
  }
  const double n = static_cast<double>(real_scores.size());
  return {lg / n, -ld / n};
}

// ---------------------------------------------------------------------------
// Model

/// Per-feature min-max scaling to [0, 1].
struct Normalizer {
  Vector lo;
  Vector hi;

  static Normalizer fit(const GroupDataset& ds) {
    const auto dim = static_cast<Eigen::Index>(ds.dim());
    Normalizer n{Vector::Constant(dim, std::numeric_limits<double>::infinity()),
                 Vector::Constant(dim, -std::numeric_limits<double>::infinity())};
    for (const auto& g : ds.groups) {
      n.lo = n.lo.cwiseMin(g.data.colwise().minCoeff().transpose());
      n.hi = n.hi.cwiseMax(g.data.colwise().maxCoeff().transpose());
    }
    return n;
  }

  Vector range() const {
    Vector r = hi - lo;
    for (Eigen::Index j = 0; j < r.size(); ++j) {
      if (!(r[j] > 0.0)) r[j] = 1.0;
    }
    return r;
  }

  Matrix forward(const Matrix& x) const {
    const Vector r = range();
    Matrix out = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = (x.col(j).array() - lo[j]) / r[j];
    return out;
  }

  Matrix inverse(const Matrix& x) const {
    const Vector r = range();
    Matrix out = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = x.col(j).array() * r[j] + lo[j];
    return out;
  }
};

struct EpochLosses {
  std::size_t epoch = 0;
  double recon = 0.0;
  double kl_or_adv = 0.0;  // VAE: KL; AAE: generator adversarial term
  double total = 0.0;
  double discriminator = 0.0;  // AAE only
};

struct GroupReference {
  Matrix data;
};

/// Encoder/decoder (and, for AAE, discriminator) with their parameters.
/// Not copyable: layers point into the owned parameter sets.
class DgmModel {
 public:
  DgmModel(TrainConfig cfg, std::size_t n_points, std::size_t dim, Normalizer norm)
      : cfg_(std::move(cfg)), n_points_(n_points), dim_(dim), norm_(std::move(norm)) {
    validate(cfg_);
    Rng rng(cfg_.seed ^ 0xD1B54A32D192ED03ULL);
    const std::size_t in = n_points_ * dim_;
    const std::size_t k = cfg_.latent_size;
    if (!cfg_.encoder_hidden.empty()) {
      std::vector<std::size_t> sizes{in};
      sizes.insert(sizes.end(), cfg_.encoder_hidden.begin(), cfg_.encoder_hidden.end());
      trunk_ = nn::Mlp(*ae_, "enc/trunk", sizes, nn::Activation::Elu, rng);
    }
    const std::size_t h = cfg_.encoder_hidden.empty() ? in : cfg_.encoder_hidden.back();
    head_mu_ = nn::Mlp(*ae_, cfg_.kind == DgmKind::Vae ? "enc/mu" : "enc/z", {h, k},
                       nn::Activation::Identity, rng);
    if (cfg_.kind == DgmKind::Vae) {
      head_log_sigma_ = nn::Mlp(*ae_, "enc/log_sigma", {h, k}, nn::Activation::Identity, rng);
    }
    std::vector<std::size_t> dsizes{k};
    dsizes.insert(dsizes.end(), cfg_.decoder_hidden.begin(), cfg_.decoder_hidden.end());
    dsizes.push_back(in);
    decoder_ = nn::Mlp(*ae_, "dec", dsizes, nn::Activation::Sigmoid, rng);
    if (cfg_.kind == DgmKind::Aae) {
      std::vector<std::size_t> csizes{k};
      csizes.insert(csizes.end(), cfg_.discriminator_hidden.begin(), cfg_.discriminator_hidden.end());
      csizes.push_back(1);
      discriminator_ = nn::Mlp(*disc_, "disc", csizes, nn::Activation::Identity, rng);
    }
  }

  DgmModel(const DgmModel&) = delete;
  DgmModel& operator=(const DgmModel&) = delete;
  DgmModel(DgmModel&&) = default;
  DgmModel& operator=(DgmModel&&) = default;

  DgmKind kind() const { return cfg_.kind; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t n_points() const { return n_points_; }
  std::size_t dim() const { return dim_; }
  std::size_t latent_size() const { return cfg_.latent_size; }
  const Normalizer& normalizer() const { return norm_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  const std::vector<EpochLosses>& history() const { return history_; }
  std::vector<EpochLosses>& history() { return history_; }

  nn::ParamSet& autoencoder_params() { return *ae_; }
  nn::ParamSet& discriminator_params() { return *disc_; }
  const nn::ParamSet& autoencoder_params() const { return *ae_; }
  const nn::ParamSet& discriminator_params() const { return *disc_; }

  /// Flattened, scaled encoder input for one group (one row).
  Vector input_row(const Group& g) const {
    if (g.n_points() != n_points_ || g.dim() != dim_) {
      throw Error(Errc::ShapeMismatch, "group is " + std::to_string(g.n_points()) + "x" +
                                           std::to_string(g.dim()) + ", model expects " +
                                           std::to_string(n_points_) + "x" + std::to_string(dim_));
    }
    const Group ordered = cfg_.scoring.canonical ? canonical_order(g) : g;
    return flatten_group(Group{norm_.forward(ordered.data)});
  }

  Matrix inputs(const GroupDataset& ds) const {
    Matrix x(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(n_points_ * dim_));
    for (std::size_t m = 0; m < ds.size(); ++m) {
      x.row(static_cast<Eigen::Index>(m)) = input_row(ds.groups[m]).transpose();
    }
    return x;
  }

  struct Encoded {
    nn::Var mu;
    nn::Var log_sigma;  // VAE only
  };

  Encoded encode(nn::Graph& g, nn::Var x, Rng* dropout_rng = nullptr) const {
    nn::Var h = x;
    if (trunk_) h = forward_with_dropout(g, *trunk_, h, dropout_rng, true);
    Encoded e{head_mu_.forward(g, h), {}};
    if (cfg_.kind == DgmKind::Vae) e.log_sigma = head_log_sigma_.forward(g, h);
    return e;
  }

  nn::Var decode(nn::Graph& g, nn::Var z, Rng* dropout_rng = nullptr) const {
    return forward_with_dropout(g, decoder_, z, dropout_rng, false);
  }

  /// Discriminator logit (D = sigmoid of it).
  nn::Var discriminate(nn::Graph& g, nn::Var z) const { return discriminator_.forward(g, z); }

  /// Graph-free encoder outputs for a batch of input rows. For AAE the
  /// log_sigma matrix is empty and mu holds z.
  std::pair<Matrix, Matrix> encode_eval(const Matrix& x) const {
    const Matrix h = trunk_ ? trunk_->eval(x) : x;
    Matrix mu = head_mu_.eval(h);
    Matrix ls = cfg_.kind == DgmKind::Vae ? head_log_sigma_.eval(h) : Matrix{};
    return {std::move(mu), std::move(ls)};
  }

  EncoderOutput encode_group(const Group& g) const {
    Matrix x = input_row(g).transpose();
    auto [mu, ls] = encode_eval(x);
    EncoderOutput out;
    out.mu = mu.row(0).transpose();
    if (ls.size() > 0) out.log_sigma = ls.row(0).transpose();
    return out;
  }

  /// Decoded group in data space (rows in the decoder's positional order).
  Group decode_latent(const Vector& z) const {
    if (static_cast<std::size_t>(z.size()) != cfg_.latent_size) {
      throw Error(Errc::ShapeMismatch, "latent has wrong length");
    }
    Matrix zr = z.transpose();
    Matrix flat = decoder_.eval(zr);
    Group scaled = unflatten_group(std::span<const double>(flat.data(), static_cast<std::size_t>(flat.size())),
                                   n_points_, dim_);
    return Group{norm_.inverse(scaled.data)};
  }

  /// Discriminator probabilities for latent rows.
  Vector discriminator_eval(const Matrix& z) const {
    Matrix logits = discriminator_.eval(z);
    Vector p(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) p[i] = nn::stable_sigmoid(logits(i, 0));
    return p;
  }

  TensorMap to_tensors() const;
  static DgmModel from_tensors(const TensorMap& t);

 private:
  nn::Var forward_with_dropout(nn::Graph& g, const nn::Mlp& mlp, nn::Var x, Rng* rng,
                               bool last_is_hidden) const {
    const auto& layers = mlp.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      x = nn::apply(nn::dense(x, g.param(*layers[l].weight), g.param(*layers[l].bias)),
                    layers[l].activation);
      const bool hidden = l + 1 < layers.size() || last_is_hidden;
      if (rng && hidden && cfg_.dropout > 0.0) {
        const auto& v = g.value(x);
        nn::Tensor mask(v.rows(), v.cols());
        const double keep = 1.0 - cfg_.dropout;
        for (Eigen::Index k = 0; k < mask.size(); ++k) {
          mask.data()[k] = rng->uniform() < keep ? 1.0 / keep : 0.0;
        }
        x = nn::mul(x, g.constant(std::move(mask)));
      }
    }
    return x;
  }

  TrainConfig cfg_;
  std::size_t n_points_;
  std::size_t dim_;
  Normalizer norm_;
  std::unique_ptr<nn::ParamSet> ae_ = std::make_unique<nn::ParamSet>();
  std::unique_ptr<nn::ParamSet> disc_ = std::make_unique<nn::ParamSet>();
  std::optional<nn::Mlp> trunk_;
  nn::Mlp head_mu_;
  nn::Mlp head_log_sigma_;
  nn::Mlp decoder_;
  nn::Mlp discriminator_;
  bool trained_ = false;
  std::vector<EpochLosses> history_;
};

namespace detail {

inline Matrix sizes_row(const std::vector<std::size_t>& v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = static_cast<double>(v[i]);
  return m;
}

inline std::vector<std::size_t> sizes_from(const Matrix& m) {
  std::vector<std::size_t> v;
  for (Eigen::Index i = 0; i < m.size(); ++i) v.push_back(static_cast<std::size_t>(m.data()[i]));
  return v;
}

inline const Matrix& need(const TensorMap& t, const std::string& name) {
  auto it = t.find(name);
  if (it == t.end()) throw Error(Errc::ParseError, "checkpoint lacks " + name);
  return it->second;
}

}  // namespace detail

inline TensorMap DgmModel::to_tensors() const {
  TensorMap t;
  nn::export_params(*ae_, t);
  nn::export_params(*disc_, t);
  Matrix meta(1, 9);
  meta << (cfg_.kind == DgmKind::Vae ? 0.0 : 1.0), static_cast<double>(n_points_),
      static_cast<double>(dim_), static_cast<double>(cfg_.latent_size), trained_ ? 1.0 : 0.0,
      cfg_.scoring.canonical ? 1.0 : 0.0,
      cfg_.scoring.distance == GroupDistance::Frobenius ? 0.0 : 1.0,
      static_cast<double>(cfg_.n_reference_draws), static_cast<double>(cfg_.seed);
  t["meta/model"] = meta;
  t["meta/encoder_hidden"] = detail::sizes_row(cfg_.encoder_hidden);
  t["meta/decoder_hidden"] = detail::sizes_row(cfg_.decoder_hidden);
  t["meta/discriminator_hidden"] = detail::sizes_row(cfg_.discriminator_hidden);
  t["meta/norm_lo"] = norm_.lo.transpose();
  t["meta/norm_hi"] = norm_.hi.transpose();
  return t;
}

inline DgmModel DgmModel::from_tensors(const TensorMap& t) {
  const Matrix& meta = detail::need(t, "meta/model");
  if (meta.size() != 9) throw Error(Errc::ParseError, "meta/model has wrong length");
  TrainConfig cfg;
  cfg.kind = meta(0, 0) == 0.0 ? DgmKind::Vae : DgmKind::Aae;
  cfg.latent_size = static_cast<std::size_t>(meta(0, 3));
  cfg.scoring.canonical = meta(0, 5) != 0.0;
  cfg.scoring.distance = meta(0, 6) == 0.0 ? GroupDistance::Frobenius : GroupDistance::CenteredFrobenius;
  cfg.n_reference_draws = static_cast<std::size_t>(meta(0, 7));
  cfg.seed = static_cast<std::uint64_t>(meta(0, 8));
  cfg.encoder_hidden = detail::sizes_from(detail::need(t, "meta/encoder_hidden"));
  cfg.decoder_hidden = detail::sizes_from(detail::need(t, "meta/decoder_hidden"));
  cfg.discriminator_hidden = detail::sizes_from(detail::need(t, "meta/discriminator_hidden"));
  Normalizer norm{detail::need(t, "meta/norm_lo").row(0).transpose(),
                  detail::need(t, "meta/norm_hi").row(0).transpose()};
  DgmModel model(cfg, static_cast<std::size_t>(meta(0, 1)), static_cast<std::size_t>(meta(0, 2)),
                 std::move(norm));
  nn::import_params(*model.ae_, t);
  nn::import_params(*model.disc_, t);
  model.trained_ = meta(0, 4) != 0.0;
  return model;
}

inline void save_model(const std::string& path, const DgmModel& model) {
  save_tensors(path, model.to_tensors());
}

inline DgmModel load_model(const std::string& path) { return DgmModel::from_tensors(load_tensors(path)); }

// ---------------------------------------------------------------------------
// Batch losses as graph nodes. Each returns the scalar loss plus its parts.

struct BatchLoss {
  nn::Var total;
  double recon = 0.0;
  double regularizer = 0.0;  // KL (VAE) or adversarial term (AAE generator)
};

/// Mean over the batch of recon + kl_weight * KL.
inline BatchLoss vae_batch_loss(nn::Graph& g, const DgmModel& model, const Matrix& x,
                                const Matrix& noise, Rng* dropout_rng = nullptr) {
  const auto xv = g.constant(x);
  auto enc = model.encode(g, xv, dropout_rng);
  auto z = nn::reparam_sample(enc.mu, enc.log_sigma, noise);
  auto x_hat = model.decode(g, z, dropout_rng);
  auto recon = nn::row_sum(nn::square(nn::sub(x_hat, xv)));
  // 0.5 * sum(exp(2 ls) + mu^2 - 1 - 2 ls)
  auto kl_inner = nn::sub(nn::add(nn::exp(nn::scale(enc.log_sigma, 2.0)), nn::square(enc.mu)),
                          nn::add_scalar(nn::scale(enc.log_sigma, 2.0), 1.0));
  auto kl = nn::scale(nn::row_sum(kl_inner), 0.5);
  auto per_group = nn::add(recon, nn::scale(kl, model.config().kl_weight));
  BatchLoss out{nn::mean(per_group), 0.0, 0.0};
  out.recon = g.value(recon).mean();
  out.regularizer = g.value(kl).mean();
  return out;
}

/// Generator/reconstruction objective of the AAE:
/// mean recon - adversarial_weight * (1/M') sum log D(z).
inline BatchLoss aae_generator_loss(nn::Graph& g, const DgmModel& model, const Matrix& x,
                                    Rng* dropout_rng = nullptr) {
  const auto xv = g.constant(x);
  auto z = model.encode(g, xv, dropout_rng).mu;
  auto x_hat = model.decode(g, z, dropout_rng);
  auto recon = nn::row_sum(nn::square(nn::sub(x_hat, xv)));
  auto log_d_fake = nn::log_sigmoid(model.discriminate(g, z));
  auto adv = nn::scale(nn::mean(log_d_fake), -1.0);
  BatchLoss out{nn::add(nn::mean(recon), nn::scale(adv, model.config().adversarial_weight)), 0.0,
                0.0};
  out.recon = g.value(recon).mean();
  out.regularizer = g.scalar(adv);
  return out;
}

/// Discriminator objective: -(1/M') sum [log D(z') + log(1 - D(z))], with z
/// fixed encodings and z' prior draws.
inline nn::Var aae_discriminator_loss(nn::Graph& g, const DgmModel& model, const Matrix& z_fake,
                                      const Matrix& z_real) {
  auto real = nn::log_sigmoid(model.discriminate(g, g.constant(z_real)));
  // log(1 - sigmoid(a)) = log sigmoid(-a)
  auto fake = nn::log_sigmoid(nn::scale(model.discriminate(g, g.constant(z_fake)), -1.0));
  return nn::scale(nn::add(nn::mean(real), nn::mean(fake)), -1.0);
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

inline void add_l2(nn::ParamSet& params, double weight) {
  if (weight <= 0.0) return;
  for (auto& p : params) {
    if (p.name.size() >= 2 && p.name.compare(p.name.size() - 2, 2, "/W") == 0) {
      p.grad += 2.0 * weight * p.value;
    }
  }
}

inline void check_finite(double v, std::size_t epoch) {
  if (!std::isfinite(v)) {
    throw Error(Errc::NonConvergent, "loss became non-finite in epoch " + std::to_string(epoch));
  }
}

}  // namespace detail

/// Fits a VAE or AAE to the groups of `ds`. Labels, if any, are ignored.
inline DgmModel train(const GroupDataset& ds, const TrainConfig& cfg) {
  validate(cfg);
  validate_dataset(ds);
  if (!ds.equal_sizes()) {
    throw Error(Errc::UnequalGroupSizes, "deep generative models need groups of equal size");
  }
  Normalizer norm;
  if (cfg.normalization) {
    const auto& [lo, hi] = *cfg.normalization;
    if (lo.size() != ds.dim() || hi.size() != ds.dim()) {
      throw Error(Errc::InvalidConfig, "normalization bounds must have one entry per feature");
    }
    norm.lo = Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    norm.hi = Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  } else {
    norm = Normalizer::fit(ds);
  }
  DgmModel model(cfg, ds.groups.front().n_points(), ds.dim(), std::move(norm));
  const Matrix x = model.inputs(ds);

  Rng rng(cfg.seed);
  Rng order_rng = rng.split();
  Rng noise_rng = rng.split();
  Rng dropout_rng = rng.split();
  Rng* drop = cfg.dropout > 0.0 ? &dropout_rng : nullptr;
  const nn::AdamOptions adam{cfg.learning_rate};
  const auto k = static_cast<Eigen::Index>(cfg.latent_size);

  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochLosses acc;
    acc.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix xb = detail::gather_rows(x, idx);
      const auto b = static_cast<double>(idx.size());

      if (cfg.kind == DgmKind::Vae) {
        nn::Graph g;
        const Matrix noise = detail::normal_matrix(xb.rows(), k, noise_rng);
        auto loss = vae_batch_loss(g, model, xb, noise, drop);
        detail::check_finite(g.scalar(loss.total), epoch);
        model.autoencoder_params().zero_grad();
        g.backward(loss.total);
        detail::add_l2(model.autoencoder_params(), cfg.l2_weight);
        nn::adam_step(model.autoencoder_params(), adam);
        acc.recon += loss.recon * b;
        acc.kl_or_adv += loss.regularizer * b;
        acc.total += g.scalar(loss.total) * b;
      } else {
        // Discriminator step on current encodings vs. prior draws.
        const Matrix z_fake = model.encode_eval(xb).first;
        const Matrix z_real = detail::normal_matrix(xb.rows(), k, noise_rng);
        {
          nn::Graph g;
          auto ld = aae_discriminator_loss(g, model, z_fake, z_real);
          detail::check_finite(g.scalar(ld), epoch);
          model.discriminator_params().zero_grad();
          g.backward(ld);
          detail::add_l2(model.discriminator_params(), cfg.l2_weight);
          nn::adam_step(model.discriminator_params(), adam);
          acc.discriminator += g.scalar(ld) * b;
        }
        // Generator + reconstruction step; discriminator gradients are discarded.
        nn::Graph g;
        auto loss = aae_generator_loss(g, model, xb, drop);
        detail::check_finite(g.scalar(loss.total), epoch);
        model.autoencoder_params().zero_grad();
        g.backward(loss.total);
        model.discriminator_params().zero_grad();
        detail::add_l2(model.autoencoder_params(), cfg.l2_weight);
        nn::adam_step(model.autoencoder_params(), adam);
        acc.recon += loss.recon * b;
        acc.kl_or_adv += loss.regularizer * b;
        acc.total += g.scalar(loss.total) * b;
      }
      seen += idx.size();
    }
    const auto n = static_cast<double>(seen);
    acc.recon /= n;
    acc.kl_or_adv /= n;
    acc.total /= n;
    acc.discriminator /= n;
    model.history().push_back(acc);
  }
  model.mark_trained();
  return model;
}

inline void write_training_curve(std::ostream& os, const DgmModel& model) {
  os << "epoch,recon,kl_or_adv,total\n";
  for (const auto& e : model.history()) {
    os << e.epoch << ',' << detail::format_double(e.recon) << ','
       << detail::format_double(e.kl_or_adv) << ',' << detail::format_double(e.total) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Reference and scoring

/// VAE: average (mu_m, sigma_m) over all groups, draw z ~ N(mu, sigma), decode.
/// AAE: encode one uniformly drawn group, decode its latent.
inline GroupReference group_reference(const DgmModel& model, const GroupDataset& ds, Rng& rng) {
  if (!model.trained()) throw Error(Errc::UntrainedModel, "group_reference needs a trained model");
  validate_dataset(ds);
  const auto k = static_cast<Eigen::Index>(model.latent_size());
  Vector z(k);
  if (model.kind() == DgmKind::Vae) {
    auto [mu, ls] = model.encode_eval(model.inputs(ds));
    const Vector mu_bar = mu.colwise().mean().transpose();
    const Vector sigma_bar = ls.array().exp().matrix().colwise().mean().transpose();
    for (Eigen::Index j = 0; j < k; ++j) z[j] = mu_bar[j] + sigma_bar[j] * rng.normal();
  } else {
    const std::size_t m = rng.below(ds.size());
    z = model.encode_group(ds.groups[m]).mu;
  }
  return GroupReference{model.decode_latent(z).data};
}

inline double group_distance(const Matrix& ref, const Matrix& g, const ScoreOptions& opt) {
  if (ref.rows() != g.rows() || ref.cols() != g.cols()) {
    throw Error(Errc::ShapeMismatch, "reference is " + std::to_string(ref.rows()) + "x" +
                                         std::to_string(ref.cols()) + ", group is " +
                                         std::to_string(g.rows()) + "x" + std::to_string(g.cols()));
  }
  Matrix a = opt.canonical ? canonical_order(Group{ref}).data : ref;
  Matrix b = opt.canonical ? canonical_order(Group{g}).data : g;
  if (opt.distance == GroupDistance::CenteredFrobenius) {
    a.rowwise() -= a.colwise().mean();
    b.rowwise() -= b.colwise().mean();
  }
  return (a - b).squaredNorm();
}

inline ScoreTable score(const GroupReference& ref, const GroupDataset& ds,
                        const ScoreOptions& opt = {}) {
  std::vector<double> s(ds.size());
  for (std::size_t m = 0; m < ds.size(); ++m) s[m] = group_distance(ref.data, ds.groups[m].data, opt);
  return make_score_table(std::move(s));
}

/// Mean distance over several references.
inline ScoreTable score(std::span<const GroupReference> refs, const GroupDataset& ds,
                        const ScoreOptions& opt = {}) {
  if (refs.empty()) throw Error(Errc::InvalidConfig, "no references");
  std::vector<double> s(ds.size(), 0.0);
  for (const auto& r : refs) {
    for (std::size_t m = 0; m < ds.size(); ++m) s[m] += group_distance(r.data, ds.groups[m].data, opt);
  }
  for (auto& v : s) v /= static_cast<double>(refs.size());
  return make_score_table(std::move(s));
}

/// References drawn with `n_reference_draws` from the model config, then scores.
/// `reference_ds` supplies the groups the reference aggregates over; `target`
/// may be unseen data.
inline ScoreTable score_with_model(const DgmModel& model, const GroupDataset& reference_ds,
                                   const GroupDataset& target, std::uint64_t seed,
                                   std::vector<GroupReference>* refs_out = nullptr) {
  Rng rng(seed);
  std::vector<GroupReference> refs;
  for (std::size_t d = 0; d < model.config().n_reference_draws; ++d) {
    refs.push_back(group_reference(model, reference_ds, rng));
  }
  auto table = score(refs, target, model.config().scoring);
  if (refs_out) *refs_out = std::move(refs);
  return table;
}

}  // namespace gadk
