#include <doctest.h>

#include <cmath>
#include <vector>

#include "twassl/distances.hpp"
#include "twassl/graph.hpp"
#include "twassl/rng.hpp"
#include "twassl/tree.hpp"

using namespace twassl;

TEST_CASE("twd fixed values on the tv tree") {
  const TreeTopology t = build_tv_tree(4, 0.5);
  CHECK(twd(t, SimplexVector({0.5, 0.5, 0.0, 0.0}), SimplexVector({0.0, 0.0, 0.5, 0.5})) ==
        doctest::Approx(1.0).epsilon(1e-15));
  Rng rng(2);
  const SimplexVector a = SimplexVector::random(4, rng);
  CHECK(twd(t, a, a) == 0.0);
  CHECK_THROWS_AS(twd(t, SimplexVector({0.5, 0.5}), a), Error);
}

TEST_CASE("twd within-cluster one-hots on the cluster tree") {
  const TreeTopology t = build_cluster_tree(2, 2, 0.5, 0.5);
  CHECK(twd(t, SimplexVector::one_hot(4, 0), SimplexVector::one_hot(4, 1)) ==
        doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("total variation fixed values and the tv-tree identity") {
  CHECK(total_variation(SimplexVector({1.0, 0.0}), SimplexVector({0.0, 1.0})) == 1.0);
  CHECK(total_variation(SimplexVector({0.5, 0.5}), SimplexVector({0.25, 0.75})) ==
        doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(4);
  const TreeTopology t = build_tv_tree(6, 0.5);
  for (int rep = 0; rep < 100; ++rep) {
    const SimplexVector a = SimplexVector::random(6, rng);
    const SimplexVector b = SimplexVector::random(6, rng);
    CHECK(std::abs(twd(t, a, b) - total_variation(a, b)) <= 1e-12);
  }
}

TEST_CASE("rtwd is the total variation regardless of topology") {
  Rng rng(6);
  const TreeTopology cl = build_cluster_tree(2, 3, 0.5, 0.5);
  const SimplexVector a = SimplexVector::random(6, rng);
  CHECK(rtwd(cl, a, a) == 0.0);

  const TreeTopology t4 = build_cluster_tree(2, 2, 0.5, 0.5);
  CHECK(rtwd(t4, SimplexVector::one_hot(4, 0), SimplexVector::one_hot(4, 2)) ==
        doctest::Approx(1.0).epsilon(1e-15));

  for (int rep = 0; rep < 50; ++rep) {
    const SimplexVector x = SimplexVector::random(6, rng);
    const SimplexVector y = SimplexVector::random(6, rng);
    CHECK(rtwd(cl, x, y) == total_variation(x, y));
  }
}

TEST_CASE("metric axioms for twd") {
  Rng rng(8);
  std::vector<TreeTopology> topologies = {
      build_tv_tree(5, 0.5),
      build_cluster_tree(2, 3, 0.5, 0.5),
      build_chain_tree_uniform(5, 0.8),
  };
  for (const auto& t : topologies) {
    for (int rep = 0; rep < 1000; ++rep) {
      const SimplexVector a = SimplexVector::random(t.n_leaves, rng);
      const SimplexVector b = SimplexVector::random(t.n_leaves, rng);
      const SimplexVector c = SimplexVector::random(t.n_leaves, rng);
      const double ab = twd(t, a, b);
      const double ba = twd(t, b, a);
      const double ac = twd(t, a, c);
      const double cb = twd(t, c, b);
      CHECK(ab == ba);
      CHECK(ab >= 0.0);
      CHECK(ab <= ac + cb + 1e-12);
    }
  }
}

TEST_CASE("jeffrey divergence: fixed scalar oracle value") {
  // Independent straight-line KL evaluation for ([.5,.5],[.25,.75]).
  const double kl_pq = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  const double kl_qp = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
  const double expected = kl_pq + kl_qp;
  CHECK(expected == doctest::Approx(0.2747).epsilon(1e-3));

  const SimplexVector p({0.5, 0.5});
  const SimplexVector q({0.25, 0.75});
  CHECK(jeffrey_divergence(p, q) == doctest::Approx(expected).epsilon(1e-9));

  // Same value through the unit tv tree (B = I, w = 1).
  const TreeTopology unit = build_tv_tree(2, 1.0);
  CHECK(jeffrey_divergence(unit, p, q) == doctest::Approx(expected).epsilon(1e-9));

  // W^2 <= JD on this pair: W = L1 = 0.5 under B = I, w = 1.
  const double w = twd(unit, p, q);
  CHECK(w * w == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(w * w <= jeffrey_divergence(unit, p, q));
}

TEST_CASE("jeffrey divergence: identity, symmetry, hypothesis check") {
  Rng rng(12);
  const TreeTopology cl = build_cluster_tree(2, 2, 0.5, 0.5);
  const SimplexVector a = SimplexVector::random(4, rng);
  CHECK(jeffrey_divergence(cl, a, a) == doctest::Approx(0.0).epsilon(1e-12));

  const SimplexVector b = SimplexVector::random(4, rng);
  CHECK(jeffrey_divergence(cl, a, b) == doctest::Approx(jeffrey_divergence(cl, b, a)));
  CHECK(jeffrey_divergence(cl, a, b) >= 0.0);

  // Half-weight tv tree violates B^T w = 1; the tree overload must refuse.
  const TreeTopology half = build_tv_tree(4, 0.5);
  CHECK_THROWS_WITH_AS(jeffrey_divergence(half, a, b), doctest::Contains("B^T w"), Error);
}

TEST_CASE("squared twd stays below the Jeffrey divergence on sampled pairs") {
  Rng rng(14);
  const TreeTopology cl = build_cluster_tree(2, 2, 0.5, 0.5);
  for (int rep = 0; rep < 300; ++rep) {
    const SimplexVector a = SimplexVector::random(4, rng);
    const SimplexVector b = SimplexVector::random(4, rng);
    const double w = twd(cl, a, b);
    CHECK(w * w <= jeffrey_divergence(cl, a, b) + 1e-12);
  }
}

TEST_CASE("cosine similarity endpoints") {
  const Tensor z = Tensor::vec({1.0, 2.0, -3.0});
  CHECK(cosine_similarity(z, z) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(Tensor::vec({1.0, 0.0}), Tensor::vec({0.0, 5.0})) ==
        doctest::Approx(0.0));
  CHECK(cosine_similarity(z, scale(z, -1.0)) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_similarity(Tensor::vec({0.0, 0.0}), z), Error);
}

TEST_CASE("differentiable twd node matches finite differences off the kinks") {
  Rng rng(16);
  const TreeTopology cl = build_cluster_tree(2, 2, 0.5, 0.5);
  const Tensor m = transpose(cl.embed_matrix());
  double worst = 0.0;
  int done = 0;
  while (done < 20) {
    Tensor raw({1, 4});
    for (std::size_t i = 0; i < 4; ++i) raw[i] = rng.normal();
    const Tensor a1 = softmax_rows(raw);
    const SimplexVector b = SimplexVector::random(4, rng);
    Tensor bt({1, 4});
    for (std::size_t i = 0; i < 4; ++i) bt[i] = b[i];
    // Keep every embedded coordinate difference clear of zero.
    const Tensor diff = sub(matmul(a1, m), matmul(bt, m));
    double gap = 1e300;
    for (std::size_t i = 0; i < diff.numel(); ++i) gap = std::min(gap, std::abs(diff[i]));
    if (gap < 1e-5) continue;

    Graph g;
    NodeId logits = g.input(raw);
    NodeId a_node = g.softmax_rows(logits);
    NodeId dist = twd_node(g, cl, a_node, g.constant(bt));
    worst = std::max(worst, g.grad_check(dist, logits, 1e-6));
    ++done;
  }
  CHECK(worst <= 1e-4);
}
