#pragma once
// SSL objectives over a two-view batch: InfoNCE and the SimSiam form, with
// tree-Wasserstein or cosine similarity, plus Jeffrey-divergence
// regularization of the positive pairs and collapse diagnostics.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/distances.hpp"
#include "twassl/graph.hpp"
#include "twassl/tensor.hpp"
#include "twassl/tree.hpp"

namespace twassl {

enum class Objective { InfoNceTwd, SimSiamTwd, InfoNceCosine, SimSiamCosine };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::InfoNceTwd: return "infonce_twd";
    case Objective::SimSiamTwd: return "simsiam_twd";
    case Objective::InfoNceCosine: return "infonce_cosine";
    case Objective::SimSiamCosine: return "simsiam_cosine";
  }
  return "?";
}

inline Objective objective_from_name(const std::string& s) {
  if (s == "infonce_twd") return Objective::InfoNceTwd;
  if (s == "simsiam_twd") return Objective::SimSiamTwd;
  if (s == "infonce_cosine") return Objective::InfoNceCosine;
  if (s == "simsiam_cosine") return Objective::SimSiamCosine;
  fail("unknown objective '" + s + "'");
}

inline bool objective_is_simsiam(Objective o) {
  return o == Objective::SimSiamTwd || o == Objective::SimSiamCosine;
}

inline bool objective_uses_twd(Objective o) {
  return o == Objective::InfoNceTwd || o == Objective::SimSiamTwd;
}

// Where the JD regularizer measures divergence. TreeEmbedded needs B^T w = 1;
// with a half-weighted TV tree that hypothesis fails and the divergence is
// taken on the raw simplex vectors instead (the B = I, w = 1 reading).
enum class JdMode { Auto, TreeEmbedded, LeafSimplex };

inline JdMode resolve_jd_mode(JdMode mode, const TreeTopology& t) {
  if (mode != JdMode::Auto) return mode;
  return t.unit_column_weights() ? JdMode::TreeEmbedded : JdMode::LeafSimplex;
}

struct LossConfig {
  Objective objective = Objective::InfoNceTwd;
  double tau = 0.07;       // InfoNCE temperature
  double lambda_jd = 0.1;  // regularization weight
  JdMode jd_mode = JdMode::Auto;

  void validate() const {
    check(tau > 0.0, "loss: tau must be positive");
    check(lambda_jd >= 0.0, "loss: lambda_jd must be nonnegative");
  }
};

// Mean Jeffrey divergence of the positive pairs, as a scalar node.
inline NodeId jd_regularizer_node(Graph& g, NodeId a1, NodeId a2, const TreeTopology& t,
                                  JdMode mode) {
  mode = resolve_jd_mode(mode, t);
  if (mode == JdMode::TreeEmbedded) {
    check(t.unit_column_weights(),
          "jd_regularizer: tree-embedded mode requires B^T w = 1 on the topology");
    NodeId e1 = tree_embed_node(g, t, a1);
    NodeId e2 = tree_embed_node(g, t, a2);
    return g.mean(jeffrey_rows_node(g, e1, e2));
  }
  return g.mean(jeffrey_rows_node(g, a1, a2));
}

// InfoNCE with the negative tree-Wasserstein distance as similarity:
// mean_i [ W(a1_i, a2_i)/tau + log sum_{k in negatives(i)} exp(-W(a1_i, pool_k)/tau) ]
// plus lambda_jd times the mean positive-pair Jeffrey divergence. The
// negative set of anchor i is all 2R-2 embeddings of both views except the
// two views of sample i.
inline NodeId infonce_twd_loss(Graph& g, NodeId a1, NodeId a2, const TreeTopology& t,
                               double tau, double lambda_jd, JdMode jd_mode = JdMode::Auto) {
  check(tau > 0.0, "infonce_twd_loss: tau must be positive");
  const std::size_t r = g.value(a1).rows();
  check(g.value(a2).rows() == r, "infonce_twd_loss: view batches differ in size");
  check(r >= 2, "infonce_twd_loss: batch of " + std::to_string(r) + " has no negatives");

  NodeId e1 = tree_embed_node(g, t, a1);
  NodeId e2 = tree_embed_node(g, t, a2);
  NodeId pos = g.rowwise_l1(e1, e2);

  NodeId pool = g.concat_rows(e1, e2);
  NodeId dist = g.pairwise_l1(e1, pool);

  Tensor mask({r, 2 * r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < 2 * r; ++k)
      mask.at(i, k) = (k == i || k == i + r) ? 0.0 : 1.0;

  NodeId weights = g.mul(g.exp(g.scale(dist, -1.0 / tau)), g.constant(mask));
  NodeId lse = g.log(g.row_sum(weights));
  NodeId contrast = g.mean(g.add(g.scale(pos, 1.0 / tau), lse));
  if (lambda_jd == 0.0) return contrast;
  NodeId reg = jd_regularizer_node(g, a1, a2, t, jd_mode);
  return g.add(contrast, g.scale(reg, lambda_jd));
}

// InfoNCE with cosine similarity over raw feature rows (the baseline).
inline NodeId infonce_cosine_loss(Graph& g, NodeId z1, NodeId z2, double tau) {
  check(tau > 0.0, "infonce_cosine_loss: tau must be positive");
  const std::size_t r = g.value(z1).rows();
  check(g.value(z2).rows() == r, "infonce_cosine_loss: view batches differ in size");
  check(r >= 2, "infonce_cosine_loss: batch has no negatives");

  NodeId n1 = g.l2_normalize_rows(z1);
  NodeId n2 = g.l2_normalize_rows(z2);
  NodeId pos = g.row_sum(g.mul(n1, n2));

  NodeId pool = g.concat_rows(n1, n2);
  NodeId sims = g.matmul(n1, g.transpose(pool));

  Tensor mask({r, 2 * r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < 2 * r; ++k)
      mask.at(i, k) = (k == i || k == i + r) ? 0.0 : 1.0;

  NodeId weights = g.mul(g.exp(g.scale(sims, 1.0 / tau)), g.constant(mask));
  NodeId lse = g.log(g.row_sum(weights));
  return g.mean(g.add(g.scale(pos, -1.0 / tau), lse));
}

// Symmetrized SimSiam objective with TWD:
//   1/2 mean W(online1_i, target2_i) + 1/2 mean W(online2_i, target1_i)
// plus JD terms on the same pairs. Both target nodes must be stop-gradient
// marks; the structural check fails otherwise.
inline NodeId simsiam_twd_loss(Graph& g, NodeId online1, NodeId online2, NodeId target1,
                               NodeId target2, const TreeTopology& t, double lambda_jd,
                               JdMode jd_mode = JdMode::Auto) {
  check(g.op(target1) == Op::StopGrad && g.op(target2) == Op::StopGrad,
        "simsiam_twd_loss: target branch is missing its stop-gradient mark");

  NodeId eo1 = tree_embed_node(g, t, online1);
  NodeId eo2 = tree_embed_node(g, t, online2);
  NodeId et1 = tree_embed_node(g, t, target1);
  NodeId et2 = tree_embed_node(g, t, target2);

  NodeId l12 = g.mean(g.rowwise_l1(eo1, et2));
  NodeId l21 = g.mean(g.rowwise_l1(eo2, et1));
  NodeId base = g.add(g.scale(l12, 0.5), g.scale(l21, 0.5));
  if (lambda_jd == 0.0) return base;
  NodeId jd12 = jd_regularizer_node(g, online1, target2, t, jd_mode);
  NodeId jd21 = jd_regularizer_node(g, online2, target1, t, jd_mode);
  NodeId reg = g.add(g.scale(jd12, 0.5), g.scale(jd21, 0.5));
  return g.add(base, g.scale(reg, lambda_jd));
}

// SimSiam with negative cosine similarity (the original formulation).
inline NodeId simsiam_cosine_loss(Graph& g, NodeId online1, NodeId online2, NodeId target1,
                                  NodeId target2) {
  check(g.op(target1) == Op::StopGrad && g.op(target2) == Op::StopGrad,
        "simsiam_cosine_loss: target branch is missing its stop-gradient mark");
  NodeId no1 = g.l2_normalize_rows(online1);
  NodeId no2 = g.l2_normalize_rows(online2);
  NodeId nt1 = g.l2_normalize_rows(target1);
  NodeId nt2 = g.l2_normalize_rows(target2);
  NodeId c12 = g.mean(g.row_sum(g.mul(no1, nt2)));
  NodeId c21 = g.mean(g.row_sum(g.mul(no2, nt1)));
  return g.add(g.scale(c12, -0.5), g.scale(c21, -0.5));
}

// ---- collapse diagnostics ---------------------------------------------------

struct CollapseMetrics {
  double mean_pairwise_twd = 0.0;
  std::vector<double> per_dim_std;
  double mean_std = 0.0;
  double entropy = 0.0;  // mean Shannon entropy of the rows, natural log
};

// Diagnostics for mode-collapse detection over a batch of simplex rows.
inline CollapseMetrics collapse_metrics(const Tensor& simplex_rows, const TreeTopology& t) {
  const std::size_t r = simplex_rows.rows();
  const std::size_t d = simplex_rows.cols();
  check(r >= 2, "collapse_metrics: need at least two rows");
  check(d == t.n_leaves, "collapse_metrics: row width does not match leaf count");

  CollapseMetrics out;
  const Tensor embedded = matmul(simplex_rows, transpose(t.embed_matrix()));
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = i + 1; j < r; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < embedded.cols(); ++c)
        s += std::abs(embedded.at(i, c) - embedded.at(j, c));
      total += s;
      ++pairs;
    }
  }
  out.mean_pairwise_twd = total / static_cast<double>(pairs);

  // Variance via mean squared pairwise differences: exactly zero when every
  // row coincides, which is the collapse signature this feeds.
  out.per_dim_std.assign(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double sq = 0.0;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = i + 1; j < r; ++j) {
        const double diff = simplex_rows.at(i, c) - simplex_rows.at(j, c);
        sq += diff * diff;
      }
    out.per_dim_std[c] = std::sqrt(sq / static_cast<double>(r * r));
    out.mean_std += out.per_dim_std[c];
  }
  out.mean_std /= static_cast<double>(d);

  double ent = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double p = simplex_rows.at(i, c);
      if (p > 0.0) ent -= p * std::log(p);
    }
  }
  out.entropy = ent / static_cast<double>(r);
  return out;
}

}  // namespace twassl
