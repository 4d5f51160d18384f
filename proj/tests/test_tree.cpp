#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "twassl/distances.hpp"
#include "twassl/rng.hpp"
#include "twassl/tree.hpp"

using namespace twassl;

namespace {

// Independent shortest-path oracle: explicit edge list + Dijkstra, no use of
// the ancestor-matrix formula.
struct EdgeListTree {
  std::size_t n_vertices = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;

  void add_edge(std::size_t u, std::size_t v, double w) {
    adj.resize(std::max({adj.size(), u + 1, v + 1}));
    adj[u].push_back({v, w});
    adj[v].push_back({u, w});
    n_vertices = adj.size();
  }

  double distance(std::size_t s, std::size_t t) const {
    std::vector<double> dist(n_vertices, 1e300);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s] = 0.0;
    pq.push({0.0, s});
    while (!pq.empty()) {
      auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      for (auto [v, w] : adj[u]) {
        if (dist[u] + w < dist[v]) {
          dist[v] = dist[u] + w;
          pq.push({dist[v], v});
        }
      }
    }
    return dist[t];
  }
};

}  // namespace

TEST_CASE("SimplexVector validates its invariants") {
  CHECK_NOTHROW(SimplexVector({0.25, 0.75}));
  CHECK_THROWS_AS(SimplexVector({0.5, 0.6}), Error);
  CHECK_THROWS_AS(SimplexVector({-0.1, 1.1}), Error);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const SimplexVector s = SimplexVector::random(6, rng);
    double total = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      CHECK(s[j] >= 0.0);
      total += s[j];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("tv tree: identity ancestor matrix and uniform weights") {
  const TreeTopology t = build_tv_tree(3, 0.5);
  CHECK(t.n_nodes == 3);
  CHECK(t.n_leaves == 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(t.ancestor(i, j) == (i == j ? 1 : 0));
  for (double w : t.w) CHECK(w == 0.5);
  CHECK_FALSE(validate_topology(t).has_value());

  const TreeTopology single = build_tv_tree(1, 1.0);
  CHECK(single.n_nodes == 1);
  CHECK(single.ancestor(0, 0) == 1);
  CHECK(single.w[0] == 1.0);

  CHECK_THROWS_AS(build_tv_tree(0, 0.5), Error);
}

TEST_CASE("tv tree: disjoint one-hot mass moves at unit cost") {
  const TreeTopology t = build_tv_tree(4, 0.5);
  const SimplexVector a = SimplexVector::one_hot(4, 0);
  const SimplexVector b = SimplexVector::one_hot(4, 1);
  CHECK(twd(t, a, b) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cluster tree structure and path lengths") {
  const TreeTopology t = build_cluster_tree(2, 2, 0.5, 0.5);
  CHECK(t.n_nodes == 6);
  CHECK(t.n_leaves == 4);
  CHECK_FALSE(validate_topology(t).has_value());
  // Each leaf column carries exactly two ones.
  for (std::size_t j = 0; j < 4; ++j) {
    int ones = 0;
    for (std::size_t i = 0; i < 6; ++i) ones += t.ancestor(i, j);
    CHECK(ones == 2);
  }

  const Tensor d = shortest_path_matrix(t);
  CHECK(d.at(0, 1) == doctest::Approx(1.0));
  CHECK(d.at(0, 2) == doctest::Approx(2.0));
  CHECK(d.at(0, 3) == doctest::Approx(2.0));
  CHECK(d.at(2, 3) == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(d.at(i, i) == 0.0);

  CHECK_THROWS_AS(build_cluster_tree(0, 2), Error);
  CHECK_THROWS_AS(build_cluster_tree(2, 0), Error);
}

TEST_CASE("cluster tree shortest paths match the Dijkstra oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t clusters = 2 + rng.uniform_index(3);
    const std::size_t per = 1 + rng.uniform_index(3);
    const double wi = rng.uniform(0.1, 1.5);
    const double wl = rng.uniform(0.1, 1.5);
    const TreeTopology t = build_cluster_tree(clusters, per, wi, wl);

    // Vertices: 0 = root, 1..clusters = internal, then leaves.
    EdgeListTree oracle;
    for (std::size_t c = 0; c < clusters; ++c) oracle.add_edge(0, 1 + c, wi);
    for (std::size_t j = 0; j < clusters * per; ++j)
      oracle.add_edge(1 + j / per, 1 + clusters + j, wl);

    const Tensor d = shortest_path_matrix(t);
    for (std::size_t i = 0; i < t.n_leaves; ++i)
      for (std::size_t j = 0; j < t.n_leaves; ++j)
        CHECK(d.at(i, j) ==
              doctest::Approx(oracle.distance(1 + clusters + i, 1 + clusters + j))
                  .epsilon(1e-12));
  }
}

TEST_CASE("single-cluster tree degenerates to leaf-weight scaled L1") {
  const TreeTopology t = build_cluster_tree(1, 4, 0.7, 0.3);
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const SimplexVector a = SimplexVector::random(4, rng);
    const SimplexVector b = SimplexVector::random(4, rng);
    double l1 = 0.0;
    for (std::size_t i = 0; i < 4; ++i) l1 += std::abs(a[i] - b[i]);
    CHECK(twd(t, a, b) == doctest::Approx(0.3 * l1).epsilon(1e-12));
  }
}

TEST_CASE("cluster tree moves cross-cluster mass along four edges") {
  const TreeTopology t = build_cluster_tree(2, 2, 0.5, 0.5);
  CHECK(twd(t, SimplexVector::one_hot(4, 0), SimplexVector::one_hot(4, 2)) ==
        doctest::Approx(2.0).epsilon(1e-15));
  CHECK(twd(t, SimplexVector::one_hot(4, 0), SimplexVector::one_hot(4, 1)) ==
        doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("chain tree realizes 1-D transport") {
  const TreeTopology two = build_chain_tree_uniform(2, 1.0);
  CHECK_FALSE(validate_topology(two).has_value());
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const SimplexVector a = SimplexVector::random(2, rng);
    const SimplexVector b = SimplexVector::random(2, rng);
    CHECK(twd(two, a, b) == doctest::Approx(std::abs(a[0] - b[0])).epsilon(1e-12));
  }

  const TreeTopology three = build_chain_tree(3, {1.0, 1.0, 1.0, 0.0, 0.0, 0.0});
  CHECK(twd(three, SimplexVector::one_hot(3, 0), SimplexVector::one_hot(3, 2)) ==
        doctest::Approx(2.0).epsilon(1e-15));
  const SimplexVector same = SimplexVector::random(3, rng);
  CHECK(twd(three, same, same) == 0.0);

  CHECK_THROWS_AS(build_chain_tree(3, {1.0, 1.0}), Error);
  CHECK_THROWS_AS(build_chain_tree(2, {1.0, 1.0, 0.5, 0.0}), Error);
}

TEST_CASE("tv tree shortest paths are the scaled Hamming distance") {
  const TreeTopology t = build_tv_tree(5, 0.5);
  const Tensor d = shortest_path_matrix(t);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(d.at(i, j) == (i == j ? 0.0 : 1.0));
}

TEST_CASE("shortest-path matrices satisfy the four-point condition") {
  Rng rng(31);
  std::vector<TreeTopology> topologies = {
      build_tv_tree(8, 0.5),
      build_cluster_tree(2, 4, 0.4, 0.9),
      build_cluster_tree(4, 2, 0.5, 0.5),
      build_chain_tree_uniform(8, 0.7),
  };
  for (const auto& t : topologies) {
    const Tensor d = shortest_path_matrix(t);
    const std::size_t n = t.n_leaves;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        for (std::size_t k = j + 1; k < n; ++k)
          for (std::size_t l = k + 1; l < n; ++l) {
            double s1 = d.at(i, j) + d.at(k, l);
            double s2 = d.at(i, k) + d.at(j, l);
            double s3 = d.at(i, l) + d.at(j, k);
            double hi = std::max({s1, s2, s3});
            double mid = s1 + s2 + s3 - hi - std::min({s1, s2, s3});
            CHECK(std::abs(hi - mid) <= 1e-12);
          }
  }
}

TEST_CASE("tree_embed fixed values and linearity") {
  const TreeTopology unit = build_tv_tree(2, 1.0);
  const Tensor e = tree_embed(unit, SimplexVector({0.3, 0.7}));
  CHECK(e[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(e[1] == doctest::Approx(0.7).epsilon(1e-15));

  const TreeTopology cl = build_cluster_tree(2, 2, 0.5, 0.5);
  const Tensor ec = tree_embed(cl, SimplexVector::one_hot(4, 0));
  const std::vector<double> expected = {0.5, 0.0, 0.5, 0.0, 0.0, 0.0};
  REQUIRE(ec.numel() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(ec[i] == doctest::Approx(expected[i]).epsilon(1e-15));

  // B^T w = 1 implies the embedding is itself a distribution.
  CHECK(cl.unit_column_weights());
  Rng rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor emb = tree_embed(cl, SimplexVector::random(4, rng));
    CHECK(sum(emb) == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Linearity in a: embed(alpha a + (1-alpha) b) = alpha embed(a) + ...
  for (int rep = 0; rep < 20; ++rep) {
    const SimplexVector a = SimplexVector::random(4, rng);
    const SimplexVector b = SimplexVector::random(4, rng);
    const double alpha = rng.uniform();
    std::vector<double> mixv(4);
    for (std::size_t i = 0; i < 4; ++i) mixv[i] = alpha * a[i] + (1 - alpha) * b[i];
    const Tensor lhs = tree_embed(cl, SimplexVector(mixv));
    const Tensor ea = tree_embed(cl, a);
    const Tensor eb = tree_embed(cl, b);
    for (std::size_t i = 0; i < lhs.numel(); ++i)
      CHECK(lhs[i] == doctest::Approx(alpha * ea[i] + (1 - alpha) * eb[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(tree_embed(cl, SimplexVector({0.5, 0.5})), Error);
}

TEST_CASE("validate_topology reports violations") {
  TreeTopology t = build_cluster_tree(2, 2, 0.5, 0.5);
  CHECK_FALSE(validate_topology(t).has_value());

  SUBCASE("negative weight") {
    t.w[0] = -0.5;
    auto v = validate_topology(t);
    REQUIRE(v.has_value());
    CHECK(v->message.find("negative weight") != std::string::npos);
  }
  SUBCASE("column not on a root path") {
    // Leaf 0 marked under both clusters: supports overlap without nesting.
    t.b[0 * t.n_leaves + 2] = 1;
    auto v = validate_topology(t);
    REQUIRE(v.has_value());
  }
  SUBCASE("leaf row must be a singleton") {
    t.b[t.leaf_ids[0] * t.n_leaves + 1] = 1;
    CHECK(validate_topology(t).has_value());
  }
}

TEST_CASE("topology JSON round-trip preserves structure") {
  const TreeTopology t = build_cluster_tree(3, 2, 0.4, 0.6);
  const nlohmann::json j = topology_to_json(t);
  const TreeTopology back = topology_from_json(j);
  CHECK(back.n_nodes == t.n_nodes);
  CHECK(back.n_leaves == t.n_leaves);
  CHECK(back.b == t.b);
  CHECK(back.w == t.w);
  CHECK(back.leaf_ids == t.leaf_ids);

  nlohmann::json corrupted = j;
  corrupted["B"][0] = "11x111";
  CHECK_THROWS_AS(topology_from_json(corrupted), Error);
}
