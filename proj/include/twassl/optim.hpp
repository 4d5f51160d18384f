#pragma once
// Desk-scale MLP encoder parameters and the SGD-momentum / Adam optimizers.
// Weight decay is decoupled from the gradient update, so weight_decay = 0
// reproduces the no-decay trajectory exactly.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/graph.hpp"
#include "twassl/rng.hpp"
#include "twassl/tensor.hpp"

namespace twassl {

struct EncoderConfig {
  std::vector<std::size_t> widths;  // d_in, hidden..., d_out
  std::string activation = "relu";

  std::size_t d_in() const { return widths.front(); }
  std::size_t d_out() const { return widths.back(); }

  void validate() const {
    check(widths.size() >= 2, "encoder: need at least one layer");
    for (std::size_t w : widths) check(w >= 1, "encoder: widths must be positive");
    check(activation == "relu", "encoder: unsupported activation '" + activation + "'");
  }
};

// Named parameter tensors in a stable order; the order fixes both the
// optimizer-buffer layout and the checkpoint blob layout.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    fail("ParamSet: unknown parameter '" + name + "'");
  }
  const Tensor& at(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    fail("ParamSet: unknown parameter '" + name + "'");
  }
  bool contains(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return true;
    return false;
  }
  void add(std::string name, Tensor t) {
    check(!contains(name), "ParamSet: duplicate parameter '" + name + "'");
    items.emplace_back(std::move(name), std::move(t));
  }
  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }
};

// He-style Gaussian init for the weight matrices, zero biases.
inline void init_mlp_params(ParamSet& params, const std::string& prefix,
                            const std::vector<std::size_t>& widths, Rng& rng) {
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Tensor w({widths[l], widths[l + 1]});
    const double sd = std::sqrt(2.0 / static_cast<double>(widths[l]));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = sd * rng.normal();
    params.add(prefix + ".w" + std::to_string(l), std::move(w));
    params.add(prefix + ".b" + std::to_string(l), Tensor({widths[l + 1]}));
  }
}

// Graph-side MLP: relu on hidden layers, linear final layer. `nodes` maps
// parameter names to their graph bindings.
struct BoundParams {
  std::vector<std::pair<std::string, NodeId>> items;

  NodeId at(const std::string& name) const {
    for (const auto& [n, id] : items)
      if (n == name) return id;
    fail("BoundParams: unknown parameter '" + name + "'");
  }
};

inline BoundParams bind_params(Graph& g, const ParamSet& params) {
  BoundParams bound;
  for (const auto& [name, t] : params.items) bound.items.emplace_back(name, g.input(t));
  return bound;
}

inline NodeId mlp_node(Graph& g, const BoundParams& bound, const std::string& prefix,
                       std::size_t n_layers, NodeId x) {
  NodeId h = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    h = g.add_rowvec(g.matmul(h, bound.at(prefix + ".w" + std::to_string(l))),
                     bound.at(prefix + ".b" + std::to_string(l)));
    if (l + 1 < n_layers) h = g.relu(h);
  }
  return h;
}

// Pure forward pass with the same semantics as mlp_node.
inline Tensor mlp_apply(const ParamSet& params, const std::string& prefix, std::size_t n_layers,
                        const Tensor& x) {
  Tensor h = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    h = add_rowvec(matmul(h, params.at(prefix + ".w" + std::to_string(l))),
                   params.at(prefix + ".b" + std::to_string(l)));
    if (l + 1 < n_layers) h = relu(h);
  }
  return h;
}

enum class OptKind { Sgd, Adam };

struct OptimizerConfig {
  OptKind kind = OptKind::Adam;
  double lr = 3e-4;
  double momentum = 0.9;       // SGD
  double beta1 = 0.9;          // Adam
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void validate() const {
    check(lr >= 0.0, "optimizer: negative learning rate");
    check(momentum >= 0.0 && momentum < 1.0, "optimizer: momentum outside [0,1)");
    check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "optimizer: betas outside [0,1)");
    check(eps > 0.0, "optimizer: eps must be positive");
    check(weight_decay >= 0.0, "optimizer: negative weight decay");
  }
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<std::string> unit_column_params = {})
      : cfg_(cfg), unit_column_params_(std::move(unit_column_params)) {
    cfg_.validate();
  }

  std::size_t step_count() const { return steps_; }

  // One update over all parameters. Gradients are given in ParamSet order;
  // a non-finite gradient aborts the step before any parameter changes.
  void step(ParamSet& params, const std::vector<Tensor>& grads) {
    check(grads.size() == params.items.size(), "optimizer: gradient count mismatch");
    for (std::size_t p = 0; p < grads.size(); ++p) {
      check(grads[p].same_shape(params.items[p].second),
            "optimizer: gradient shape mismatch for " + params.items[p].first);
      if (!grads[p].all_finite())
        fail("optimizer: non-finite gradient for " + params.items[p].first + " at step " +
             std::to_string(steps_ + 1));
    }
    if (buffers_m_.empty()) {
      for (const auto& [name, t] : params.items) {
        buffers_m_.push_back(Tensor(t.shape()));
        buffers_v_.push_back(Tensor(t.shape()));
      }
    }
    ++steps_;
    for (std::size_t p = 0; p < grads.size(); ++p) {
      Tensor& theta = params.items[p].second;
      const Tensor& grad = grads[p];
      if (cfg_.weight_decay > 0.0)
        for (std::size_t i = 0; i < theta.numel(); ++i)
          theta[i] -= cfg_.lr * cfg_.weight_decay * theta[i];
      if (cfg_.kind == OptKind::Sgd) {
        Tensor& buf = buffers_m_[p];
        for (std::size_t i = 0; i < theta.numel(); ++i) {
          buf[i] = cfg_.momentum * buf[i] + grad[i];
          theta[i] -= cfg_.lr * buf[i];
        }
      } else {
        Tensor& m = buffers_m_[p];
        Tensor& v = buffers_v_[p];
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < theta.numel(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    }
    // Projection: key-matrix columns return to the unit sphere after a step.
    for (const std::string& name : unit_column_params_) {
      if (!params.contains(name)) continue;
      Tensor& k = params.at(name);
      for (std::size_t j = 0; j < k.cols(); ++j) {
        double sq = 0.0;
        for (std::size_t i = 0; i < k.rows(); ++i) sq += k.at(i, j) * k.at(i, j);
        const double norm = std::sqrt(sq);
        check(norm > 0.0, "optimizer: key column collapsed to zero");
        for (std::size_t i = 0; i < k.rows(); ++i) k.at(i, j) /= norm;
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<std::string> unit_column_params_;
  std::vector<Tensor> buffers_m_;
  std::vector<Tensor> buffers_v_;
  std::size_t steps_ = 0;
};

}  // namespace twassl
