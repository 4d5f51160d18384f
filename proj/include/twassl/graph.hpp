#pragma once
// Reverse-mode automatic differentiation on a define-by-run tape.
//
// A Graph is an append-only list of operation records; parent ids are always
// smaller than the node id, so the tape is topologically ordered by
// construction. One backward sweep visits each node exactly once. A Graph is
// confined to a single thread for its lifetime; independent graphs may run
// concurrently.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/tensor.hpp"

namespace twassl {

struct NodeId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
  friend bool operator==(NodeId a, NodeId b) { return a.index == b.index; }
};

enum class Op {
  Input,
  Constant,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  AddRowVec,
  Relu,
  Exp,
  Log,
  Abs,
  SoftmaxRows,
  L2NormRows,
  Sum,
  Mean,
  RowSum,
  ConcatRows,
  Reshape,
  PairwiseL1,
  RowwiseL1,
  StopGrad,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::AddRowVec: return "add_rowvec";
    case Op::Relu: return "relu";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Abs: return "abs";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::L2NormRows: return "l2_normalize_rows";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::ConcatRows: return "concat_rows";
    case Op::Reshape: return "reshape";
    case Op::PairwiseL1: return "pairwise_l1";
    case Op::RowwiseL1: return "rowwise_l1";
    case Op::StopGrad: return "stop_grad";
  }
  return "?";
}

class Graph {
 public:
  // Leaf bound to a value. Set requires_grad=false for constants that are
  // more naturally expressed as inputs.
  NodeId input(Tensor value, bool requires_grad = true) {
    return push(requires_grad ? Op::Input : Op::Constant, {}, std::move(value),
                requires_grad);
  }

  NodeId constant(Tensor value) { return push(Op::Constant, {}, std::move(value), false); }

  // Leaf with a declared shape but no value yet; forward() fails until bound.
  NodeId placeholder(std::vector<std::size_t> shape, bool requires_grad = true) {
    NodeId id = push_raw(requires_grad ? Op::Input : Op::Constant, {}, requires_grad);
    nodes_[id.index].declared_shape = std::move(shape);
    return id;
  }

  void set_input(NodeId id, Tensor value) {
    Node& n = node(id);
    check(n.op == Op::Input || n.op == Op::Constant, "set_input: node is not a leaf");
    if (!n.value.empty()) {
      check(n.value.same_shape(value), "set_input: shape change on rebind");
    } else if (!n.declared_shape.empty()) {
      check(value.shape() == n.declared_shape, "set_input: shape does not match placeholder");
    }
    n.value = std::move(value);
    dirty_ = true;
  }

  NodeId matmul(NodeId a, NodeId b) { return push(Op::MatMul, {a, b}); }
  NodeId transpose(NodeId a) { return push(Op::Transpose, {a}); }
  NodeId add(NodeId a, NodeId b) { return push(Op::Add, {a, b}); }
  NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return push(Op::Mul, {a, b}); }
  NodeId scale(NodeId a, double s) {
    NodeId id = push_raw(Op::Scale, {a}, node(a).requires_grad);
    nodes_[id.index].scalar_attr = s;
    eval_if_ready(id.index);
    return id;
  }
  NodeId add_scalar(NodeId a, double s) {
    NodeId id = push_raw(Op::AddScalar, {a}, node(a).requires_grad);
    nodes_[id.index].scalar_attr = s;
    eval_if_ready(id.index);
    return id;
  }
  NodeId add_rowvec(NodeId x, NodeId b) { return push(Op::AddRowVec, {x, b}); }
  NodeId relu(NodeId a) { return push(Op::Relu, {a}); }
  NodeId exp(NodeId a) { return push(Op::Exp, {a}); }
  NodeId log(NodeId a) { return push(Op::Log, {a}); }
  NodeId abs(NodeId a) { return push(Op::Abs, {a}); }
  NodeId softmax_rows(NodeId a) { return push(Op::SoftmaxRows, {a}); }
  NodeId l2_normalize_rows(NodeId a) { return push(Op::L2NormRows, {a}); }
  NodeId sum(NodeId a) { return push(Op::Sum, {a}); }
  NodeId mean(NodeId a) { return push(Op::Mean, {a}); }
  NodeId row_sum(NodeId a) { return push(Op::RowSum, {a}); }
  NodeId concat_rows(NodeId a, NodeId b) { return push(Op::ConcatRows, {a, b}); }
  NodeId reshape(NodeId a, std::vector<std::size_t> shape) {
    NodeId id = push_raw(Op::Reshape, {a}, node(a).requires_grad);
    nodes_[id.index].shape_attr = std::move(shape);
    eval_if_ready(id.index);
    return id;
  }
  NodeId pairwise_l1(NodeId x, NodeId y) { return push(Op::PairwiseL1, {x, y}); }
  NodeId rowwise_l1(NodeId x, NodeId y) { return push(Op::RowwiseL1, {x, y}); }

  // Forward value identical to the wrapped node; adjoints do not cross.
  NodeId stop_grad(NodeId a) { return push(Op::StopGrad, {a}, Tensor(), false); }

  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return node(id).op; }
  const std::vector<NodeId>& parents(NodeId id) const { return node(id).parents; }

  // Returns the cached forward value of root, recomputing stale nodes first.
  // Idempotent. Fails on unbound leaves and on non-finite intermediates.
  const Tensor& forward(NodeId root) {
    check(root.valid() && root.index < nodes_.size(), "forward: bad node id");
    if (dirty_) {
      for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (!nodes_[i].parents.empty()) eval_node(i);
      dirty_ = false;
    }
    const Node& n = node(root);
    check(!n.value.empty(), std::string("forward: unbound leaf input at node ") +
                                std::to_string(root.index));
    return n.value;
  }

  const Tensor& value(NodeId id) const {
    const Node& n = node(id);
    check(!n.value.empty(), "value: node has no value yet");
    return n.value;
  }

  // Populates adjoints for every node reachable from root. Root must be
  // scalar-valued. Adjoints through stop_grad are exactly zero.
  void backward(NodeId root) {
    const Tensor& rv = forward(root);
    check(rv.numel() == 1, "backward: root is not scalar");
    adjoints_.assign(nodes_.size(), Tensor());
    adjoints_[root.index] = Tensor::scalar(1.0);
    for (std::size_t i = root.index + 1; i-- > 0;) {
      if (adjoints_[i].empty()) continue;
      propagate(i);
    }
  }

  // Adjoint of a node after backward(); zero tensor for disconnected nodes.
  Tensor adjoint(NodeId id) const {
    const Node& n = node(id);
    check(id.index < adjoints_.size(), "adjoint: run backward first");
    if (adjoints_[id.index].empty()) return Tensor(n.value.shape());
    return adjoints_[id.index];
  }

  // Max relative error between the analytic gradient of root w.r.t. leaf and
  // central finite differences with step h. The caller asserts a threshold.
  double grad_check(NodeId root, NodeId leaf, double h) {
    backward(root);
    const Tensor analytic = adjoint(leaf);
    Tensor saved = node(leaf).value;
    check(!saved.empty(), "grad_check: leaf is unbound");
    double worst = 0.0;
    for (std::size_t i = 0; i < saved.numel(); ++i) {
      Tensor bumped = saved;
      bumped[i] = saved[i] + h;
      set_input(leaf, bumped);
      const double up = forward(root).item();
      bumped[i] = saved[i] - h;
      set_input(leaf, bumped);
      const double down = forward(root).item();
      const double central = (up - down) / (2.0 * h);
      const double err =
          std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
      worst = std::max(worst, err);
    }
    set_input(leaf, saved);
    forward(root);
    return worst;
  }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<NodeId> parents;
    Tensor value;
    double scalar_attr = 0.0;
    std::vector<std::size_t> shape_attr;
    std::vector<std::size_t> declared_shape;
    bool requires_grad = false;
  };

  Node& node(NodeId id) {
    check(id.valid() && id.index < nodes_.size(), "bad node id");
    return nodes_[id.index];
  }
  const Node& node(NodeId id) const {
    check(id.valid() && id.index < nodes_.size(), "bad node id");
    return nodes_[id.index];
  }

  NodeId push_raw(Op op, std::vector<NodeId> parents, bool requires_grad) {
    for (NodeId p : parents)
      check(p.valid() && p.index < nodes_.size(), "parent id out of range");
    Node n;
    n.op = op;
    n.parents = std::move(parents);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
  }

  NodeId push(Op op, std::vector<NodeId> parents, Tensor value = Tensor(),
              bool requires_grad_override = false) {
    bool rg = requires_grad_override;
    if (op != Op::Input && op != Op::Constant && op != Op::StopGrad) {
      rg = false;
      for (NodeId p : parents) rg = rg || node(p).requires_grad;
    }
    if (op == Op::Input || op == Op::Constant) rg = requires_grad_override;
    NodeId id = push_raw(op, std::move(parents), rg);
    if (op == Op::Input || op == Op::Constant) {
      nodes_[id.index].value = std::move(value);
    } else {
      eval_if_ready(id.index);
    }
    return id;
  }

  bool parents_bound(std::size_t i) const {
    for (NodeId p : nodes_[i].parents)
      if (nodes_[p.index].value.empty()) return false;
    return true;
  }

  // Eager evaluation when every parent is bound; otherwise defer to forward().
  void eval_if_ready(std::size_t i) {
    if (parents_bound(i)) {
      eval_node(i);
    } else {
      dirty_ = true;
    }
  }

  const Tensor& pval(std::size_t i, std::size_t which) {
    const Node& n = nodes_[i];
    const Node& p = nodes_[n.parents[which].index];
    check(!p.value.empty(), std::string("forward: unbound leaf input feeding node ") +
                                std::to_string(i) + " (" + op_name(n.op) + ")");
    return p.value;
  }

  void eval_node(std::size_t i) {
    Node& n = nodes_[i];
    if (n.op == Op::Input || n.op == Op::Constant) return;
    switch (n.op) {
      case Op::MatMul: n.value = twassl::matmul(pval(i, 0), pval(i, 1)); break;
      case Op::Transpose: n.value = twassl::transpose(pval(i, 0)); break;
      case Op::Add: n.value = twassl::add(pval(i, 0), pval(i, 1)); break;
      case Op::Sub: n.value = twassl::sub(pval(i, 0), pval(i, 1)); break;
      case Op::Mul: n.value = twassl::mul(pval(i, 0), pval(i, 1)); break;
      case Op::Scale: n.value = twassl::scale(pval(i, 0), n.scalar_attr); break;
      case Op::AddScalar: n.value = twassl::add_scalar(pval(i, 0), n.scalar_attr); break;
      case Op::AddRowVec: n.value = twassl::add_rowvec(pval(i, 0), pval(i, 1)); break;
      case Op::Relu: n.value = twassl::relu(pval(i, 0)); break;
      case Op::Exp: n.value = twassl::exp(pval(i, 0)); break;
      case Op::Log: n.value = twassl::log(pval(i, 0)); break;
      case Op::Abs: n.value = twassl::abs(pval(i, 0)); break;
      case Op::SoftmaxRows: n.value = twassl::softmax_rows(pval(i, 0)); break;
      case Op::L2NormRows: n.value = twassl::l2_normalize_rows(pval(i, 0)); break;
      case Op::Sum: n.value = Tensor::scalar(twassl::sum(pval(i, 0))); break;
      case Op::Mean: {
        const Tensor& x = pval(i, 0);
        n.value = Tensor::scalar(twassl::sum(x) / static_cast<double>(x.numel()));
        break;
      }
      case Op::RowSum: n.value = twassl::row_sum(pval(i, 0)); break;
      case Op::ConcatRows: n.value = twassl::concat_rows(pval(i, 0), pval(i, 1)); break;
      case Op::Reshape: n.value = twassl::reshape(pval(i, 0), n.shape_attr); break;
      case Op::PairwiseL1: n.value = twassl::pairwise_l1(pval(i, 0), pval(i, 1)); break;
      case Op::RowwiseL1: n.value = twassl::rowwise_l1(pval(i, 0), pval(i, 1)); break;
      case Op::StopGrad: n.value = pval(i, 0); break;
      default: fail("eval_node: unhandled op");
    }
    if (!n.value.all_finite())
      fail("forward: non-finite value at node " + std::to_string(i) + " (" + op_name(n.op) + ")");
  }

  void accum(NodeId target, const Tensor& g) {
    if (!nodes_[target.index].requires_grad) return;  // constant or stopped subtree
    Tensor& a = adjoints_[target.index];
    if (a.empty()) {
      a = g;
    } else {
      for (std::size_t i = 0; i < a.numel(); ++i) a[i] += g[i];
    }
  }

  static double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

  bool needs_grad(NodeId id) const { return nodes_[id.index].requires_grad; }

  void propagate(std::size_t i) {
    Node& n = nodes_[i];
    const Tensor& g = adjoints_[i];
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
      case Op::StopGrad:
        return;  // leaves hold their adjoint; stop_grad blocks flow entirely
      case Op::MatMul: {
        const Tensor& a = nodes_[n.parents[0].index].value;
        const Tensor& b = nodes_[n.parents[1].index].value;
        if (needs_grad(n.parents[0]))
          accum(n.parents[0], twassl::matmul(g, twassl::transpose(b)));
        if (needs_grad(n.parents[1]))
          accum(n.parents[1], twassl::matmul(twassl::transpose(a), g));
        return;
      }
      case Op::Transpose: {
        accum(n.parents[0], twassl::transpose(g));
        return;
      }
      case Op::Add:
        accum(n.parents[0], g);
        accum(n.parents[1], g);
        return;
      case Op::Sub:
        accum(n.parents[0], g);
        accum(n.parents[1], twassl::scale(g, -1.0));
        return;
      case Op::Mul: {
        const Tensor& a = nodes_[n.parents[0].index].value;
        const Tensor& b = nodes_[n.parents[1].index].value;
        accum(n.parents[0], twassl::mul(g, b));
        accum(n.parents[1], twassl::mul(g, a));
        return;
      }
      case Op::Scale:
        accum(n.parents[0], twassl::scale(g, n.scalar_attr));
        return;
      case Op::AddScalar:
        accum(n.parents[0], g);
        return;
      case Op::AddRowVec: {
        accum(n.parents[0], g);
        Tensor gb = twassl::col_sum(g);
        const Tensor& b = nodes_[n.parents[1].index].value;
        accum(n.parents[1], twassl::reshape(gb, b.shape()));
        return;
      }
      case Op::Relu: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        Tensor gx = g;
        for (std::size_t k = 0; k < gx.numel(); ++k)
          if (x[k] <= 0.0) gx[k] = 0.0;
        accum(n.parents[0], gx);
        return;
      }
      case Op::Exp:
        accum(n.parents[0], twassl::mul(g, n.value));
        return;
      case Op::Log: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        Tensor gx = g;
        for (std::size_t k = 0; k < gx.numel(); ++k) gx[k] /= x[k];
        accum(n.parents[0], gx);
        return;
      }
      case Op::Abs: {
        // d|x|/dx = 0 at x = 0 (midpoint of the subdifferential).
        const Tensor& x = nodes_[n.parents[0].index].value;
        Tensor gx = g;
        for (std::size_t k = 0; k < gx.numel(); ++k) gx[k] *= sign(x[k]);
        accum(n.parents[0], gx);
        return;
      }
      case Op::SoftmaxRows: {
        const Tensor& y = n.value;
        Tensor gx = Tensor(y.shape());
        const std::size_t rows = y.rows(), cols = y.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double gy = 0.0;
          for (std::size_t c = 0; c < cols; ++c) gy += g[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            gx[r * cols + c] = y[r * cols + c] * (g[r * cols + c] - gy);
        }
        accum(n.parents[0], gx);
        return;
      }
      case Op::L2NormRows: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        const Tensor& y = n.value;
        Tensor gx = Tensor(x.shape());
        const std::size_t rows = x.rows(), cols = x.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double norm = 0.0;
          for (std::size_t c = 0; c < cols; ++c) norm += x[r * cols + c] * x[r * cols + c];
          norm = std::sqrt(norm);
          double yg = 0.0;
          for (std::size_t c = 0; c < cols; ++c) yg += y[r * cols + c] * g[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            gx[r * cols + c] = (g[r * cols + c] - y[r * cols + c] * yg) / norm;
        }
        accum(n.parents[0], gx);
        return;
      }
      case Op::Sum: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        Tensor gx(x.shape());
        for (std::size_t k = 0; k < gx.numel(); ++k) gx[k] = g[0];
        accum(n.parents[0], gx);
        return;
      }
      case Op::Mean: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        Tensor gx(x.shape());
        const double v = g[0] / static_cast<double>(x.numel());
        for (std::size_t k = 0; k < gx.numel(); ++k) gx[k] = v;
        accum(n.parents[0], gx);
        return;
      }
      case Op::RowSum: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        Tensor gx(x.shape());
        const std::size_t rows = x.rows(), cols = x.cols();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] = g[r];
        accum(n.parents[0], gx);
        return;
      }
      case Op::ConcatRows: {
        const Tensor& a = nodes_[n.parents[0].index].value;
        const Tensor& b = nodes_[n.parents[1].index].value;
        Tensor ga(a.shape()), gb(b.shape());
        std::copy(g.data(), g.data() + a.numel(), ga.data());
        std::copy(g.data() + a.numel(), g.data() + a.numel() + b.numel(), gb.data());
        accum(n.parents[0], ga);
        accum(n.parents[1], gb);
        return;
      }
      case Op::Reshape: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        accum(n.parents[0], twassl::reshape(g, x.shape()));
        return;
      }
      case Op::PairwiseL1: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        const Tensor& y = nodes_[n.parents[1].index].value;
        Tensor gx(x.shape()), gy(y.shape());
        const std::size_t nr = x.rows(), kr = y.rows(), m = x.cols();
        for (std::size_t r = 0; r < nr; ++r) {
          const double* xr = x.data() + r * m;
          for (std::size_t c = 0; c < kr; ++c) {
            const double gv = g[r * kr + c];
            if (gv == 0.0) continue;
            const double* yc = y.data() + c * m;
            for (std::size_t l = 0; l < m; ++l) {
              const double s = sign(xr[l] - yc[l]);
              gx[r * m + l] += gv * s;
              gy[c * m + l] -= gv * s;
            }
          }
        }
        accum(n.parents[0], gx);
        accum(n.parents[1], gy);
        return;
      }
      case Op::RowwiseL1: {
        const Tensor& x = nodes_[n.parents[0].index].value;
        const Tensor& y = nodes_[n.parents[1].index].value;
        Tensor gx(x.shape()), gy(y.shape());
        const std::size_t rows = x.rows(), m = x.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t l = 0; l < m; ++l) {
            const double s = sign(x[r * m + l] - y[r * m + l]);
            gx[r * m + l] = g[r] * s;
            gy[r * m + l] = -g[r] * s;
          }
        }
        accum(n.parents[0], gx);
        accum(n.parents[1], gy);
        return;
      }
      default:
        fail("propagate: unhandled op");
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  bool dirty_ = false;
};

}  // namespace twassl
