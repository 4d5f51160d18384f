#pragma once
// Closed-form distances and divergences on simplex vectors: tree-Wasserstein,
// total variation, the robust variant (exact via its total-variation closed
// form), Jeffrey divergence over tree embeddings, and the cosine baseline.
// Each is available both as a pure evaluation and as a differentiable node.

#include <cmath>
#include <cstddef>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/graph.hpp"
#include "twassl/tensor.hpp"
#include "twassl/tree.hpp"

namespace twassl {

// Smoothing applied inside KL terms; tree embeddings can carry exact zeros.
inline constexpr double kJdSmoothing = 1e-12;

enum class MetricKind { TreeWasserstein, TotalVariation, Cosine };

struct DistanceKind {
  MetricKind kind = MetricKind::TreeWasserstein;
  TreeTopology topology;  // used only for TreeWasserstein

  static DistanceKind twd(TreeTopology t) { return {MetricKind::TreeWasserstein, std::move(t)}; }
  static DistanceKind total_variation() { return {MetricKind::TotalVariation, {}}; }
  static DistanceKind cosine() { return {MetricKind::Cosine, {}}; }
};

// W_T(a, a') = || diag(w) B (a - a') ||_1.
inline double twd(const TreeTopology& t, const SimplexVector& a, const SimplexVector& b) {
  check(a.size() == t.n_leaves && b.size() == t.n_leaves,
        "twd: vector length does not match leaf count");
  double total = 0.0;
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t.n_leaves; ++j)
      if (t.ancestor(i, j)) s += a[j] - b[j];
    total += t.w[i] * std::abs(s);
  }
  return total;
}

// Half the L1 distance; equals twd on a depth-one tree with weights 1/2.
inline double total_variation(const SimplexVector& a, const SimplexVector& b) {
  check(a.size() == b.size(), "total_variation: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

// Robust TWD. The min-max over transport plans and feasible edge weights
// collapses to the total variation for every topology, so the evaluation
// ignores the tree; the LP oracle in ot.hpp keeps this honest.
inline double rtwd(const TreeTopology& t, const SimplexVector& a, const SimplexVector& b) {
  check(a.size() == t.n_leaves && b.size() == t.n_leaves,
        "rtwd: vector length does not match leaf count");
  return total_variation(a, b);
}

inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q,
                            double eps = kJdSmoothing) {
  check(p.size() == q.size(), "kl_divergence: length mismatch");
  check(eps > 0.0, "kl_divergence: eps must be positive");
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + eps) / (1.0 + n * eps);
    const double qi = (q[i] + eps) / (1.0 + n * eps);
    s += pi * std::log(pi / qi);
  }
  return s;
}

// Symmetrized KL on raw simplex vectors (the B = I, w = 1 case).
inline double jeffrey_divergence(const SimplexVector& a, const SimplexVector& b,
                                 double eps = kJdSmoothing) {
  return kl_divergence(a.values(), b.values(), eps) + kl_divergence(b.values(), a.values(), eps);
}

// Symmetrized KL between tree embeddings diag(w)Ba and diag(w)Ba'. Requires
// B^T w = 1 so that the embeddings are probability vectors; violating that
// hypothesis is an error, not a silent fallback.
inline double jeffrey_divergence(const TreeTopology& t, const SimplexVector& a,
                                 const SimplexVector& b, double eps = kJdSmoothing) {
  check(t.unit_column_weights(),
        "jeffrey_divergence: topology violates B^T w = 1; use the leaf-simplex overload");
  const Tensor pa = tree_embed(t, a);
  const Tensor pb = tree_embed(t, b);
  std::vector<double> p(pa.data(), pa.data() + pa.numel());
  std::vector<double> q(pb.data(), pb.data() + pb.numel());
  return kl_divergence(p, q, eps) + kl_divergence(q, p, eps);
}

inline double cosine_similarity(const Tensor& z, const Tensor& zp) {
  check(z.numel() == zp.numel(), "cosine_similarity: length mismatch");
  const double nz = l2_norm(z);
  const double nzp = l2_norm(zp);
  check(nz > 0.0 && nzp > 0.0, "cosine_similarity: zero vector");
  return dot(z, zp) / (nz * nzp);
}

// ---- differentiable nodes ---------------------------------------------------

// Embeds a batch of simplex rows: A (R x n_leaves) -> A (diag(w)B)^T.
inline NodeId tree_embed_node(Graph& g, const TreeTopology& t, NodeId simplex_rows) {
  NodeId m = g.constant(transpose(t.embed_matrix()));
  return g.matmul(simplex_rows, m);
}

// twd between two simplex-vector nodes (rank-1 or single-row) as a scalar node.
inline NodeId twd_node(Graph& g, const TreeTopology& t, NodeId a, NodeId b) {
  NodeId ea = tree_embed_node(g, t, a);
  NodeId eb = tree_embed_node(g, t, b);
  return g.sum(g.abs(g.sub(ea, eb)));
}

// Row-paired KL(p||q) with smoothing, as a length-R node. Inputs are
// batches of probability rows (leaf simplexes or tree embeddings).
inline NodeId kl_rows_node(Graph& g, NodeId p, NodeId q, double eps = kJdSmoothing) {
  const double n = static_cast<double>(g.value(p).cols());
  const double z = 1.0 / (1.0 + n * eps);
  NodeId ps = g.scale(g.add_scalar(p, eps), z);
  NodeId qs = g.scale(g.add_scalar(q, eps), z);
  NodeId diff = g.sub(g.log(ps), g.log(qs));
  return g.row_sum(g.mul(ps, diff));
}

// Row-paired Jeffrey divergence as a length-R node.
inline NodeId jeffrey_rows_node(Graph& g, NodeId p, NodeId q, double eps = kJdSmoothing) {
  return g.add(kl_rows_node(g, p, q, eps), kl_rows_node(g, q, p, eps));
}

}  // namespace twassl
