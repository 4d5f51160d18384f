#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "twassl/distances.hpp"
#include "twassl/ot.hpp"
#include "twassl/rng.hpp"
#include "twassl/tree.hpp"

using namespace twassl;

TEST_CASE("lp_solve: one-variable bound via slack") {
  // min x subject to x >= 3, encoded as x - s = 3 with x, s >= 0.
  LpProblem p;
  p.objective = {1.0, 0.0};
  p.eq_matrix = Tensor::matrix(1, 2, {1.0, -1.0});
  p.eq_rhs = {3.0};
  const LpSolution sol = lp_solve(p);
  CHECK(sol.objective == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(sol.x[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("lp_solve: infeasible and unbounded are reported") {
  LpProblem infeasible;
  infeasible.objective = {1.0};
  infeasible.eq_matrix = Tensor::matrix(2, 1, {1.0, 1.0});
  infeasible.eq_rhs = {1.0, 2.0};
  CHECK_THROWS_WITH_AS(lp_solve(infeasible), doctest::Contains("infeasible"), Error);

  LpProblem unbounded;
  unbounded.objective = {-1.0};
  unbounded.eq_matrix = Tensor({0, 1});
  unbounded.eq_rhs = {};
  CHECK_THROWS_WITH_AS(lp_solve(unbounded), doctest::Contains("unbounded"), Error);
}

TEST_CASE("lp_solve matches permutation enumeration on 3x3 transport") {
  Rng rng(41);
  for (int rep = 0; rep < 25; ++rep) {
    Tensor cost({3, 3});
    for (std::size_t i = 0; i < 9; ++i) cost[i] = static_cast<double>(rng.uniform_index(10));
    const SimplexVector u = SimplexVector::uniform(3);
    const TransportPlan plan = solve_ot_exact(cost, u, u);

    // With uniform marginals the extreme couplings are permutation matrices.
    std::vector<std::size_t> perm = {0, 1, 2};
    double best = 1e300;
    do {
      double total = 0.0;
      for (std::size_t i = 0; i < 3; ++i) total += cost.at(i, perm[i]) / 3.0;
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(plan.value == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("solve_ot_exact: single source-sink pair") {
  const TransportPlan plan = solve_ot_exact(Tensor::matrix(2, 2, {0.0, 3.0, 3.0, 0.0}),
                                            SimplexVector({1.0, 0.0}),
                                            SimplexVector({0.0, 1.0}));
  CHECK(plan.value == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(plan.plan.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(plan.plan.at(0, 0) == doctest::Approx(0.0));
  CHECK(plan.plan.at(1, 0) == doctest::Approx(0.0));
  CHECK(plan.plan.at(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("solve_ot_exact: identical marginals cost nothing on a zero diagonal") {
  Rng rng(43);
  Tensor cost({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) cost.at(i, j) = i == j ? 0.0 : rng.uniform(0.5, 2.0);
  const SimplexVector a = SimplexVector::random(4, rng);
  CHECK(solve_ot_exact(cost, a, a).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("solve_ot_exact enforces the size cap") {
  Tensor cost({65, 64});
  const SimplexVector a = SimplexVector::uniform(65);
  const SimplexVector b = SimplexVector::uniform(64);
  CHECK_THROWS_WITH_AS(solve_ot_exact(cost, a, b), doctest::Contains("size cap"), Error);
}

TEST_CASE("twd equals the exact LP value under shortest-path costs") {
  Rng rng(45);
  std::vector<TreeTopology> topologies = {
      build_tv_tree(6, 0.5),
      build_cluster_tree(3, 2, 0.5, 0.5),
      build_chain_tree_uniform(6, 1.3),
  };
  for (const auto& t : topologies) {
    const Tensor costs = shortest_path_matrix(t);
    for (int rep = 0; rep < 25; ++rep) {
      const SimplexVector a = SimplexVector::random(t.n_leaves, rng);
      const SimplexVector b = SimplexVector::random(t.n_leaves, rng);
      const double closed = twd(t, a, b);
      const double lp = solve_ot_exact(costs, a, b).value;
      CHECK(std::abs(closed - lp) <= 1e-9);
    }
  }
}

TEST_CASE("returned plans satisfy their marginals") {
  Rng rng(47);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor cost({5, 7});
    for (std::size_t i = 0; i < cost.numel(); ++i) cost[i] = rng.uniform();
    const SimplexVector a = SimplexVector::random(5, rng);
    const SimplexVector b = SimplexVector::random(7, rng);
    const TransportPlan plan = solve_ot_exact(cost, a, b);
    CHECK(plan.marginal_residual <= 1e-8);
    for (std::size_t i = 0; i < plan.plan.numel(); ++i) CHECK(plan.plan[i] >= 0.0);
  }
}

TEST_CASE("sinkhorn: maximum-entropy limit is the outer product") {
  Rng rng(49);
  Tensor cost({5, 5});
  double max_cost = 0.0;
  for (std::size_t i = 0; i < cost.numel(); ++i) {
    cost[i] = rng.uniform();
    max_cost = std::max(max_cost, cost[i]);
  }
  const SimplexVector a = SimplexVector::random(5, rng);
  const SimplexVector b = SimplexVector::random(5, rng);
  const TransportPlan plan = sinkhorn(cost, a, b, 100.0 * max_cost, 20000, 1e-10);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(std::abs(plan.plan.at(i, j) - a[i] * b[j]) <= 1e-3);
}

TEST_CASE("sinkhorn approaches the LP value at small regularization") {
  Rng rng(51);
  for (int rep = 0; rep < 4; ++rep) {
    Tensor cost({8, 8});
    double mean_cost = 0.0;
    for (std::size_t i = 0; i < cost.numel(); ++i) {
      cost[i] = rng.uniform();
      mean_cost += cost[i];
    }
    mean_cost /= 64.0;
    const SimplexVector a = SimplexVector::random(8, rng);
    const SimplexVector b = SimplexVector::random(8, rng);
    const double lp = solve_ot_exact(cost, a, b).value;
    const TransportPlan plan = sinkhorn(cost, a, b, 0.01 * mean_cost, 500000, 1e-8);
    CHECK(std::abs(plan.value - lp) / lp <= 0.01);
    CHECK(plan.marginal_residual <= 1e-6);
  }
}

TEST_CASE("sinkhorn: entropic bias stays small on identical marginals") {
  Rng rng(53);
  Tensor cost({6, 6});
  double mean_cost = 0.0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      cost.at(i, j) = i == j ? 0.0 : rng.uniform(0.5, 1.5);
      mean_cost += cost.at(i, j);
    }
  mean_cost /= 36.0;
  const SimplexVector a = SimplexVector::random(6, rng);
  const TransportPlan plan = sinkhorn(cost, a, a, 0.02 * mean_cost, 500000, 1e-8);
  CHECK(plan.value <= 0.05 * mean_cost);
}

TEST_CASE("sinkhorn: marginal residual is non-increasing across iterations") {
  Rng rng(55);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor cost({7, 7});
    for (std::size_t i = 0; i < cost.numel(); ++i) cost[i] = rng.uniform();
    const SimplexVector a = SimplexVector::random(7, rng);
    const SimplexVector b = SimplexVector::random(7, rng);
    const TransportPlan plan = sinkhorn(cost, a, b, 0.05, 100000, 1e-9);
    for (std::size_t i = 1; i < plan.residual_history.size(); ++i)
      CHECK(plan.residual_history[i] <= plan.residual_history[i - 1] + 1e-12);
  }
}

TEST_CASE("sinkhorn reports non-convergence with the final residual") {
  Tensor cost = Tensor::matrix(2, 2, {0.0, 1.0, 1.0, 0.0});
  CHECK_THROWS_WITH_AS(
      sinkhorn(cost, SimplexVector({0.3, 0.7}), SimplexVector({0.6, 0.4}), 0.001, 1, 1e-14),
      doctest::Contains("no convergence"), Error);
}

TEST_CASE("rtwd_bruteforce: identity and the forced tv-tree weights") {
  Rng rng(57);
  const TreeTopology tv = build_tv_tree(5, 0.5);
  const SimplexVector a = SimplexVector::random(5, rng);
  CHECK(rtwd_bruteforce(tv, a, a) == doctest::Approx(0.0).epsilon(1e-12));

  // B = I forces w = 1, so the optimum is exactly half the L1 distance.
  const SimplexVector b = SimplexVector::random(5, rng);
  double l1 = 0.0;
  for (std::size_t i = 0; i < 5; ++i) l1 += std::abs(a[i] - b[i]);
  CHECK(rtwd_bruteforce(tv, a, b) == doctest::Approx(0.5 * l1).epsilon(1e-9));
}

TEST_CASE("rtwd_bruteforce equals total variation on the cluster tree") {
  Rng rng(59);
  const TreeTopology cl = build_cluster_tree(2, 2, 0.5, 0.5);
  for (int rep = 0; rep < 100; ++rep) {
    const SimplexVector a = SimplexVector::random(4, rng);
    const SimplexVector b = SimplexVector::random(4, rng);
    CHECK(std::abs(rtwd_bruteforce(cl, a, b) - total_variation(a, b)) <= 1e-7);
  }
}
