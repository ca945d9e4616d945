#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// A Graph records one forward pass. Nodes are appended in evaluation order,
// so node ids are already a topological order and backward() is a single
// reverse sweep. Parameters are leaves bound to a ParamSet entry; backward()
// accumulates into Parameter::grad.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gadk/core.hpp"

namespace gadk::nn {

using Tensor = gadk::Matrix;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;  // Adam first moment
  Tensor v;  // Adam second moment
};

/// Named parameters with Adam state. References returned by add() stay valid.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor init) {
    const auto rows = init.rows();
    const auto cols = init.cols();
    params_.push_back(Parameter{std::move(name), std::move(init), Tensor::Zero(rows, cols),
                                Tensor::Zero(rows, cols), Tensor::Zero(rows, cols)});
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw Error(Errc::InvalidConfig, "no parameter named " + name);
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t size() const { return params_.size(); }
  std::uint64_t step() const { return step_; }
  std::uint64_t& step() { return step_; }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::uint64_t step_ = 0;
};

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

class Graph {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, std::size_t)> back;
  };

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, {}); }

  Var param(Parameter& p) { return push(p.value, true, &p, {}); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of node `v` after backward(); zero-sized if none flowed.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  /// Reverse sweep from a 1x1 loss. Accumulates into bound Parameter::grad.
  void backward(Var loss) {
    if (consumed_) throw Error(Errc::GraphConsumed, "backward already called on this graph");
    const auto& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) throw Error(Errc::ShapeMismatch, "loss must be 1x1");
    consumed_ = true;
    nodes_[loss.id].grad = Tensor::Ones(1, 1);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.back) n.back(*this, k);
      if (n.param) n.param->grad += n.grad;
    }
  }

  // Op plumbing.
  Var push(Tensor value, bool requires_grad, Parameter* p,
           std::function<void(Graph&, std::size_t)> back) {
    if (consumed_) throw Error(Errc::GraphConsumed, "graph already consumed");
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, p, std::move(back)});
    return Var{this, nodes_.size() - 1};
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  /// Adds `g` into the gradient buffer of `id` if that node wants one.
  void accumulate(std::size_t id, const Tensor& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                         std::to_string(a.cols()) + " vs " +
                                         std::to_string(b.rows()) + "x" +
                                         std::to_string(b.cols()));
  }
}

inline Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw Error(Errc::ShapeMismatch, "operands from different graphs");
  return *a.graph;
}

}  // namespace detail

/// x[B×I] · W[I×O] + b[1×O].
inline Var dense(Var x, Var w, Var b) {
  Graph& g = detail::graph_of(x, w);
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  const auto& bv = g.value(b);
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw Error(Errc::ShapeMismatch, "dense: x " + std::to_string(xv.rows()) + "x" +
                                         std::to_string(xv.cols()) + ", W " +
                                         std::to_string(wv.rows()) + "x" +
                                         std::to_string(wv.cols()) + ", b " +
                                         std::to_string(bv.rows()) + "x" +
                                         std::to_string(bv.cols()));
  }
  Tensor out = xv * wv;
  out.rowwise() += bv.row(0);
  const bool rg = g.requires_grad(x) || g.requires_grad(w) || g.requires_grad(b);
  const auto xi = x.id, wi = w.id, bi = b.id;
  return g.push(std::move(out), rg, nullptr, [xi, wi, bi](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.node(self).grad;
    if (gr.node(wi).requires_grad) gr.accumulate_expr(wi, gr.node(xi).value.transpose() * dy);
    if (gr.node(bi).requires_grad) gr.accumulate_expr(bi, dy.colwise().sum());
    if (gr.node(xi).requires_grad) gr.accumulate_expr(xi, dy * gr.node(wi).value.transpose());
  });
}

inline Var elu(Var x, double alpha = 1.0) {
  Graph& g = *x.graph;
  const auto& xv = g.value(x);
  Tensor out = xv.unaryExpr([alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); });
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr,
                [xi, alpha](Graph& gr, std::size_t self) {
                  const auto& n = gr.node(self);
                  const auto& xin = gr.node(xi).value;
                  // d/dx = 1 for x > 0, alpha*exp(x) = out + alpha otherwise.
                  Tensor d = xin.binaryExpr(n.value, [alpha](double xv2, double yv) {
                    return xv2 > 0.0 ? 1.0 : yv + alpha;
                  });
                  gr.accumulate_expr(xi, n.grad.cwiseProduct(d));
                });
}

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

/// log(sigmoid(v)) without overflow.
inline double stable_log_sigmoid(double v) {
  return v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
}

inline Var sigmoid(Var x) {
  Graph& g = *x.graph;
  Tensor out = g.value(x).unaryExpr([](double v) { return stable_sigmoid(v); });
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr, [xi](Graph& gr, std::size_t self) {
    const auto& n = gr.node(self);
    gr.accumulate_expr(xi,
                       n.grad.cwiseProduct(n.value.cwiseProduct((1.0 - n.value.array()).matrix())));
  });
}

/// Elementwise log(sigmoid(x)).
inline Var log_sigmoid(Var x) {
  Graph& g = *x.graph;
  Tensor out = g.value(x).unaryExpr([](double v) { return stable_log_sigmoid(v); });
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr, [xi](Graph& gr, std::size_t self) {
    const auto& n = gr.node(self);
    // d/dx log sigmoid(x) = sigmoid(-x)
    Tensor d = gr.node(xi).value.unaryExpr([](double v) { return stable_sigmoid(-v); });
    gr.accumulate_expr(xi, n.grad.cwiseProduct(d));
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  detail::require_same_shape(g.value(a), g.value(b), "add");
  Tensor out = g.value(a) + g.value(b);
  const auto ai = a.id, bi = b.id;
  return g.push(std::move(out), g.requires_grad(a) || g.requires_grad(b), nullptr,
                [ai, bi](Graph& gr, std::size_t self) {
                  const Tensor& dy = gr.node(self).grad;
                  gr.accumulate(ai, dy);
                  gr.accumulate(bi, dy);
                });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  detail::require_same_shape(g.value(a), g.value(b), "sub");
  Tensor out = g.value(a) - g.value(b);
  const auto ai = a.id, bi = b.id;
  return g.push(std::move(out), g.requires_grad(a) || g.requires_grad(b), nullptr,
                [ai, bi](Graph& gr, std::size_t self) {
                  const Tensor& dy = gr.node(self).grad;
                  gr.accumulate(ai, dy);
                  gr.accumulate_expr(bi, -dy);
                });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  detail::require_same_shape(g.value(a), g.value(b), "mul");
  Tensor out = g.value(a).cwiseProduct(g.value(b));
  const auto ai = a.id, bi = b.id;
  return g.push(std::move(out), g.requires_grad(a) || g.requires_grad(b), nullptr,
                [ai, bi](Graph& gr, std::size_t self) {
                  const Tensor& dy = gr.node(self).grad;
                  gr.accumulate_expr(ai, dy.cwiseProduct(gr.node(bi).value));
                  gr.accumulate_expr(bi, dy.cwiseProduct(gr.node(ai).value));
                });
}

inline Var scale(Var x, double s) {
  Graph& g = *x.graph;
  Tensor out = g.value(x) * s;
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr, [xi, s](Graph& gr, std::size_t self) {
    gr.accumulate_expr(xi, gr.node(self).grad * s);
  });
}

inline Var add_scalar(Var x, double s) {
  Graph& g = *x.graph;
  Tensor out = (g.value(x).array() + s).matrix();
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr, [xi](Graph& gr, std::size_t self) {
    gr.accumulate(xi, gr.node(self).grad);
  });
}

inline Var exp(Var x) {
  Graph& g = *x.graph;
  Tensor out = g.value(x).array().exp().matrix();
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr, [xi](Graph& gr, std::size_t self) {
    const auto& n = gr.node(self);
    gr.accumulate_expr(xi, n.grad.cwiseProduct(n.value));
  });
}

inline Var log(Var x) {
  Graph& g = *x.graph;
  if ((g.value(x).array() <= 0.0).any()) throw Error(Errc::DomainError, "log of non-positive value");
  Tensor out = g.value(x).array().log().matrix();
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr, [xi](Graph& gr, std::size_t self) {
    gr.accumulate_expr(xi, gr.node(self).grad.cwiseQuotient(gr.node(xi).value));
  });
}

inline Var square(Var x) {
  Graph& g = *x.graph;
  Tensor out = g.value(x).array().square().matrix();
  const auto xi = x.id;
  return g.push(std::move(out), g.requires_grad(x), nullptr, [xi](Graph& gr, std::size_t self) {
    gr.accumulate_expr(xi, 2.0 * gr.node(self).grad.cwiseProduct(gr.node(xi).value));
  });
}

/// Sum of all entries, as a 1x1 node.
inline Var sum(Var x) {
  Graph& g = *x.graph;
  Tensor out(1, 1);
  out(0, 0) = g.value(x).sum();
  const auto xi = x.id;
  const auto rows = g.value(x).rows(), cols = g.value(x).cols();
  return g.push(std::move(out), g.requires_grad(x), nullptr,
                [xi, rows, cols](Graph& gr, std::size_t self) {
                  gr.accumulate_expr(xi, Tensor::Constant(rows, cols, gr.node(self).grad(0, 0)));
                });
}

inline Var mean(Var x) {
  const auto n = static_cast<double>(x.graph->value(x).size());
  return scale(sum(x), 1.0 / n);
}

/// Per-row sums, B×C -> B×1.
inline Var row_sum(Var x) {
  Graph& g = *x.graph;
  Tensor out = g.value(x).rowwise().sum();
  const auto xi = x.id;
  const auto cols = g.value(x).cols();
  return g.push(std::move(out), g.requires_grad(x), nullptr,
                [xi, cols](Graph& gr, std::size_t self) {
                  gr.accumulate_expr(xi, gr.node(self).grad.replicate(1, cols));
                });
}

/// mu + exp(log_sigma) ⊙ noise. Gradients reach mu and log_sigma; noise is data.
inline Var reparam_sample(Var mu, Var log_sigma, const Tensor& noise) {
  Graph& g = detail::graph_of(mu, log_sigma);
  detail::require_same_shape(g.value(mu), g.value(log_sigma), "reparam_sample");
  detail::require_same_shape(g.value(mu), noise, "reparam_sample");
  Var eps = g.constant(noise);
  return add(mu, mul(exp(log_sigma), eps));
}

}  // namespace gadk::nn
