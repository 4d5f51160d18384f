#pragma once
// Tree topologies for tree-Wasserstein distances: the leaf-ancestor matrix B,
// edge weights w, tree embeddings diag(w)Ba and leaf shortest-path distances.
//
// The root is excluded from B and w (its edge weight is fixed to zero), so an
// all-ones row never appears. Node ordering is: internal nodes in BFS order,
// then leaves in index order. A TreeTopology is immutable after construction
// and safe for concurrent shared reads.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "twassl/common.hpp"
#include "twassl/rng.hpp"
#include "twassl/tensor.hpp"

namespace twassl {

// Nonnegative vector summing to one; the probability output of any head.
class SimplexVector {
 public:
  explicit SimplexVector(std::vector<double> values) : a_(std::move(values)) {
    check(!a_.empty(), "SimplexVector: empty vector");
    double total = 0.0;
    for (double v : a_) {
      check(v >= 0.0, "SimplexVector: negative entry");
      total += v;
    }
    check(std::abs(total - 1.0) <= 1e-9, "SimplexVector: entries sum to " + std::to_string(total));
  }

  std::size_t size() const { return a_.size(); }
  double operator[](std::size_t i) const { return a_[i]; }
  const std::vector<double>& values() const { return a_; }

  static SimplexVector uniform(std::size_t n) {
    return SimplexVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static SimplexVector one_hot(std::size_t n, std::size_t hot) {
    std::vector<double> v(n, 0.0);
    v.at(hot) = 1.0;
    return SimplexVector(std::move(v));
  }

  // Random interior point of the simplex (normalized exponentials).
  static SimplexVector random(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    double total = 0.0;
    for (auto& x : v) {
      double u = 0.0;
      do {
        u = rng.uniform();
      } while (u <= 0.0);
      x = -std::log(u);
      total += x;
    }
    for (auto& x : v) x /= total;
    return SimplexVector(std::move(v));
  }

 private:
  std::vector<double> a_;
};

struct TreeTopology {
  std::size_t n_nodes = 0;   // excludes the root
  std::size_t n_leaves = 0;
  std::vector<std::uint8_t> b;  // n_nodes x n_leaves, row-major; b[i][j]=1 iff
                                // node i is an ancestor of leaf j or leaf j itself
  std::vector<double> w;        // nonnegative edge weights, length n_nodes
  std::vector<std::size_t> leaf_ids;  // node index of each leaf, by leaf order
  std::string kind = "custom";

  std::uint8_t ancestor(std::size_t node, std::size_t leaf) const {
    return b[node * n_leaves + leaf];
  }

  // diag(w) * B as a dense matrix, the linear map behind tree embeddings.
  Tensor embed_matrix() const {
    Tensor m({n_nodes, n_leaves});
    for (std::size_t i = 0; i < n_nodes; ++i)
      for (std::size_t j = 0; j < n_leaves; ++j)
        if (ancestor(i, j)) m.at(i, j) = w[i];
    return m;
  }

  // Per-leaf sums of ancestor weights, i.e. B^T w.
  std::vector<double> column_weight_sums() const {
    std::vector<double> s(n_leaves, 0.0);
    for (std::size_t i = 0; i < n_nodes; ++i)
      for (std::size_t j = 0; j < n_leaves; ++j)
        if (ancestor(i, j)) s[j] += w[i];
    return s;
  }

  bool unit_column_weights(double tol = 1e-9) const {
    for (double s : column_weight_sums())
      if (std::abs(s - 1.0) > tol) return false;
    return true;
  }
};

// Depth-one tree: every leaf hangs off the root. B is the identity; with
// edge weight 1/2 the induced distance is the total variation.
inline TreeTopology build_tv_tree(std::size_t n_leaves, double edge_weight) {
  check(n_leaves >= 1, "build_tv_tree: need at least one leaf");
  check(edge_weight >= 0.0, "build_tv_tree: negative edge weight");
  TreeTopology t;
  t.kind = "tv";
  t.n_nodes = n_leaves;
  t.n_leaves = n_leaves;
  t.b.assign(n_leaves * n_leaves, 0);
  for (std::size_t i = 0; i < n_leaves; ++i) t.b[i * n_leaves + i] = 1;
  t.w.assign(n_leaves, edge_weight);
  t.leaf_ids.resize(n_leaves);
  for (std::size_t i = 0; i < n_leaves; ++i) t.leaf_ids[i] = i;
  return t;
}

// Two-level tree: root -> cluster nodes -> leaves. Each leaf column has
// exactly two ones (its own row and its cluster's row). With both levels
// weighted 1/2 the column weight sums B^T w equal one.
inline TreeTopology build_cluster_tree(std::size_t n_clusters, std::size_t leaves_per_cluster,
                                       double internal_weight = 0.5, double leaf_weight = 0.5) {
  check(n_clusters >= 1 && leaves_per_cluster >= 1, "build_cluster_tree: zero counts");
  check(internal_weight >= 0.0 && leaf_weight >= 0.0, "build_cluster_tree: negative weight");
  TreeTopology t;
  t.kind = "cluster";
  t.n_leaves = n_clusters * leaves_per_cluster;
  t.n_nodes = n_clusters + t.n_leaves;
  t.b.assign(t.n_nodes * t.n_leaves, 0);
  t.w.assign(t.n_nodes, 0.0);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    t.w[c] = internal_weight;
    for (std::size_t l = 0; l < leaves_per_cluster; ++l) {
      const std::size_t leaf = c * leaves_per_cluster + l;
      t.b[c * t.n_leaves + leaf] = 1;
    }
  }
  t.leaf_ids.resize(t.n_leaves);
  for (std::size_t j = 0; j < t.n_leaves; ++j) {
    const std::size_t node = n_clusters + j;
    t.b[node * t.n_leaves + j] = 1;
    t.w[node] = leaf_weight;
    t.leaf_ids[j] = node;
  }
  return t;
}

// Chain realizing a 1-D sliced arrangement: internal nodes form a path off
// the root and leaf k hangs from the k-th internal node with a zero-weight
// edge. weights covers all 2*n_leaves nodes (internal chain first, then
// leaves); the leaf entries must be zero.
inline TreeTopology build_chain_tree(std::size_t n_leaves, const std::vector<double>& weights) {
  check(n_leaves >= 1, "build_chain_tree: need at least one leaf");
  check(weights.size() == 2 * n_leaves,
        "build_chain_tree: weights length " + std::to_string(weights.size()) +
            " does not match node count " + std::to_string(2 * n_leaves));
  for (double v : weights) check(v >= 0.0, "build_chain_tree: negative weight");
  for (std::size_t j = n_leaves; j < 2 * n_leaves; ++j)
    check(weights[j] == 0.0, "build_chain_tree: leaf edges must carry zero weight");
  TreeTopology t;
  t.kind = "chain";
  t.n_leaves = n_leaves;
  t.n_nodes = 2 * n_leaves;
  t.b.assign(t.n_nodes * t.n_leaves, 0);
  t.w = weights;
  // Internal node k is an ancestor of leaves k..n-1.
  for (std::size_t k = 0; k < n_leaves; ++k)
    for (std::size_t j = k; j < n_leaves; ++j) t.b[k * t.n_leaves + j] = 1;
  t.leaf_ids.resize(n_leaves);
  for (std::size_t j = 0; j < n_leaves; ++j) {
    const std::size_t node = n_leaves + j;
    t.b[node * t.n_leaves + j] = 1;
    t.leaf_ids[j] = node;
  }
  return t;
}

// Chain with equal gaps between consecutive leaves. The first internal edge
// (root side) never separates two leaves, so its weight is zero.
inline TreeTopology build_chain_tree_uniform(std::size_t n_leaves, double gap) {
  std::vector<double> w(2 * n_leaves, 0.0);
  for (std::size_t k = 1; k < n_leaves; ++k) w[k] = gap;
  return build_chain_tree(n_leaves, w);
}

// Leaf-to-leaf shortest-path distances, d(i,j) = w^T (b_i + b_j - 2 b_i.b_j).
inline Tensor shortest_path_matrix(const TreeTopology& t) {
  Tensor d({t.n_leaves, t.n_leaves});
  for (std::size_t i = 0; i < t.n_leaves; ++i) {
    for (std::size_t j = i + 1; j < t.n_leaves; ++j) {
      double s = 0.0;
      for (std::size_t node = 0; node < t.n_nodes; ++node) {
        const int bi = t.ancestor(node, i);
        const int bj = t.ancestor(node, j);
        s += t.w[node] * static_cast<double>(bi + bj - 2 * bi * bj);
      }
      d.at(i, j) = s;
      d.at(j, i) = s;
    }
  }
  return d;
}

// diag(w) B a. When B^T w = 1 the output sums to one.
inline Tensor tree_embed(const TreeTopology& t, const SimplexVector& a) {
  check(a.size() == t.n_leaves, "tree_embed: vector length does not match leaf count");
  Tensor out({t.n_nodes});
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t.n_leaves; ++j)
      if (t.ancestor(i, j)) s += a[j];
    out[i] = t.w[i] * s;
  }
  return out;
}

struct TopologyViolation {
  std::string message;
};

// Checks the TreeTopology invariants; reports the first violation found.
// Valid B matrices have laminar row supports (the leaf sets under any two
// nodes are nested or disjoint), every leaf owns a singleton row, and each
// leaf belongs to its own column.
inline std::optional<TopologyViolation> validate_topology(const TreeTopology& t) {
  if (t.b.size() != t.n_nodes * t.n_leaves)
    return TopologyViolation{"B size does not match n_nodes x n_leaves"};
  if (t.w.size() != t.n_nodes) return TopologyViolation{"w length does not match n_nodes"};
  if (t.leaf_ids.size() != t.n_leaves)
    return TopologyViolation{"leaf_ids length does not match n_leaves"};
  for (std::size_t i = 0; i < t.n_nodes; ++i)
    if (t.w[i] < 0.0)
      return TopologyViolation{"negative weight at node " + std::to_string(i)};
  for (std::uint8_t v : t.b)
    if (v != 0 && v != 1) return TopologyViolation{"B entry not in {0,1}"};

  // Leaf j's own row must be the singleton {j}.
  for (std::size_t j = 0; j < t.n_leaves; ++j) {
    const std::size_t node = t.leaf_ids[j];
    if (node >= t.n_nodes) return TopologyViolation{"leaf id out of range"};
    for (std::size_t k = 0; k < t.n_leaves; ++k) {
      const bool want = (k == j);
      if ((t.ancestor(node, k) != 0) != want)
        return TopologyViolation{"leaf row " + std::to_string(node) +
                                 " is not the singleton for leaf " + std::to_string(j)};
    }
  }

  // Every column must contain its leaf's own row.
  for (std::size_t j = 0; j < t.n_leaves; ++j)
    if (!t.ancestor(t.leaf_ids[j], j))
      return TopologyViolation{"column " + std::to_string(j) + " misses its own leaf row"};

  // Laminar family: supports of any two rows are nested or disjoint. This is
  // exactly the condition for each column's rows to form a root path.
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    for (std::size_t k = i + 1; k < t.n_nodes; ++k) {
      std::size_t inter = 0, only_i = 0, only_k = 0;
      for (std::size_t j = 0; j < t.n_leaves; ++j) {
        const bool bi = t.ancestor(i, j);
        const bool bk = t.ancestor(k, j);
        if (bi && bk) ++inter;
        else if (bi) ++only_i;
        else if (bk) ++only_k;
      }
      if (inter > 0 && only_i > 0 && only_k > 0)
        return TopologyViolation{"rows " + std::to_string(i) + " and " + std::to_string(k) +
                                 " overlap without nesting (column root-path broken)"};
    }
  }

  // No empty rows: a node with no descendant leaves cannot sit in B.
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < t.n_leaves; ++j) any = any || t.ancestor(i, j);
    if (!any) return TopologyViolation{"row " + std::to_string(i) + " has no leaves"};
  }
  return std::nullopt;
}

// ---- JSON fixture exchange --------------------------------------------------

inline nlohmann::json topology_to_json(const TreeTopology& t) {
  nlohmann::json j;
  j["kind"] = t.kind;
  j["n_nodes"] = t.n_nodes;
  j["n_leaves"] = t.n_leaves;
  std::vector<std::string> rows(t.n_nodes);
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    std::string row(t.n_leaves, '0');
    for (std::size_t c = 0; c < t.n_leaves; ++c)
      if (t.ancestor(i, c)) row[c] = '1';
    rows[i] = std::move(row);
  }
  j["B"] = rows;
  j["w"] = t.w;
  j["leaf_ids"] = t.leaf_ids;
  return j;
}

inline TreeTopology topology_from_json(const nlohmann::json& j) {
  TreeTopology t;
  t.kind = j.value("kind", "custom");
  t.n_nodes = j.at("n_nodes").get<std::size_t>();
  t.n_leaves = j.at("n_leaves").get<std::size_t>();
  const auto rows = j.at("B").get<std::vector<std::string>>();
  check(rows.size() == t.n_nodes, "topology_from_json: B row count mismatch");
  t.b.assign(t.n_nodes * t.n_leaves, 0);
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    check(rows[i].size() == t.n_leaves, "topology_from_json: B row width mismatch");
    for (std::size_t c = 0; c < t.n_leaves; ++c) {
      const char ch = rows[i][c];
      check(ch == '0' || ch == '1', "topology_from_json: B entries must be 0/1");
      t.b[i * t.n_leaves + c] = ch == '1' ? 1 : 0;
    }
  }
  t.w = j.at("w").get<std::vector<double>>();
  t.leaf_ids = j.at("leaf_ids").get<std::vector<std::size_t>>();
  if (auto v = validate_topology(t)) fail("topology_from_json: " + v->message);
  return t;
}

}  // namespace twassl
