#pragma once

// Dense MLP layers on top of the autodiff graph, and the Adam optimizer.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gadk/autodiff.hpp"
#include "gadk/io.hpp"
#include "gadk/random.hpp"

namespace gadk::nn {

enum class Activation { Identity, Elu, Sigmoid };

/// Glorot-uniform initialized weight matrix.
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.uniform(-a, a);
  return w;
}

struct DenseLayer {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  Activation activation = Activation::Identity;

  std::size_t in() const { return static_cast<std::size_t>(weight->value.rows()); }
  std::size_t out() const { return static_cast<std::size_t>(weight->value.cols()); }
};

inline Var apply(Var x, Activation a) {
  switch (a) {
    case Activation::Elu: return elu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Identity: break;
  }
  return x;
}

/// Stack of dense layers. `sizes` = {in, h1, ..., out}; hidden layers use ELU,
/// the last layer uses `output`.
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParamSet& params, const std::string& prefix, const std::vector<std::size_t>& sizes,
      Activation output, Rng& rng) {
    if (sizes.size() < 2) throw Error(Errc::InvalidConfig, "an MLP needs at least in and out sizes");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      if (sizes[l] == 0 || sizes[l + 1] == 0) throw Error(Errc::InvalidConfig, "zero layer size");
      DenseLayer layer;
      const auto base = prefix + "/" + std::to_string(l);
      layer.weight = &params.add(base + "/W", glorot_uniform(sizes[l], sizes[l + 1], rng));
      layer.bias = &params.add(base + "/b", Tensor::Zero(1, static_cast<Eigen::Index>(sizes[l + 1])));
      layer.activation = l + 2 == sizes.size() ? output : Activation::Elu;
      layers_.push_back(layer);
    }
  }

  Var forward(Graph& g, Var x) const {
    for (const auto& layer : layers_) {
      x = apply(dense(x, g.param(*layer.weight), g.param(*layer.bias)), layer.activation);
    }
    return x;
  }

  /// Forward pass without recording a graph.
  Tensor eval(const Tensor& x) const {
    Tensor h = x;
    for (const auto& layer : layers_) {
      Tensor z = h * layer.weight->value;
      z.rowwise() += layer.bias->value.row(0);
      switch (layer.activation) {
        case Activation::Elu:
          h = z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
          break;
        case Activation::Sigmoid:
          h = z.unaryExpr([](double v) { return stable_sigmoid(v); });
          break;
        case Activation::Identity:
          h = std::move(z);
          break;
      }
    }
    return h;
  }

  std::size_t in() const { return layers_.front().in(); }
  std::size_t out() const { return layers_.back().out(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter from `grads` (aligned
/// with the iteration order of `params`). Increments the step counter.
inline void adam_step(ParamSet& params, std::span<const Tensor> grads, const AdamOptions& opt) {
  if (grads.size() != params.size()) {
    throw Error(Errc::ShapeMismatch, "adam_step: " + std::to_string(grads.size()) +
                                         " gradients for " + std::to_string(params.size()) +
                                         " parameters");
  }
  std::size_t k = 0;
  for (const auto& p : params) {
    if (grads[k].rows() != p.value.rows() || grads[k].cols() != p.value.cols()) {
      throw Error(Errc::ShapeMismatch, "adam_step: gradient shape mismatch for " + p.name);
    }
    ++k;
  }
  const auto t = ++params.step();
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  k = 0;
  for (auto& p : params) {
    const auto& g = grads[k++];
    p.m = opt.beta1 * p.m + (1.0 - opt.beta1) * g;
    p.v = opt.beta2 * p.v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    p.value.array() -=
        opt.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + opt.eps);
  }
}

/// Adam update using the gradients accumulated in the parameters.
inline void adam_step(ParamSet& params, const AdamOptions& opt) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad);
  adam_step(params, grads, opt);
}

inline void export_params(const ParamSet& params, TensorMap& out) {
  for (const auto& p : params) out[p.name] = p.value;
}

inline void import_params(ParamSet& params, const TensorMap& in) {
  for (auto& p : params) {
    auto it = in.find(p.name);
    if (it == in.end()) throw Error(Errc::ParseError, "checkpoint lacks tensor " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw Error(Errc::ShapeMismatch, "checkpoint tensor " + p.name + " has wrong shape");
    }
    p.value = it->second;
  }
}

}  // namespace gadk::nn
