#pragma once
// Oracle sweeps behind `twassl verify` and the acceptance suite: closed-form
// TWD against the exact LP, the robust-TWD LP against total variation, the
// Jeffrey-divergence bound, Pinsker's inequality, Sinkhorn against the LP,
// loss-level gradient checks and DCT orthonormality.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/distances.hpp"
#include "twassl/graph.hpp"
#include "twassl/heads.hpp"
#include "twassl/losses.hpp"
#include "twassl/ot.hpp"
#include "twassl/rng.hpp"
#include "twassl/tensor.hpp"
#include "twassl/tree.hpp"

namespace twassl {

struct SweepRow {
  std::string topology;
  std::size_t n_leaves = 0;
  std::size_t trial = 0;
  double value_a = 0.0;
  double value_b = 0.0;
  double err = 0.0;
};

struct SweepReport {
  std::string suite;
  std::string col_a = "value_a";
  std::string col_b = "value_b";
  std::vector<SweepRow> rows;
  double tolerance = 0.0;
  double max_err = 0.0;
  bool pass = false;

  void add(std::string topology, std::size_t n_leaves, std::size_t trial, double a, double b,
           double err) {
    rows.push_back({std::move(topology), n_leaves, trial, a, b, err});
    max_err = std::max(max_err, err);
  }

  void finalize() { pass = max_err <= tolerance; }

  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "topology,n_leaves,trial," << col_a << "," << col_b << ",abs_err\n";
    for (const auto& r : rows)
      os << r.topology << "," << r.n_leaves << "," << r.trial << "," << r.value_a << ","
         << r.value_b << "," << r.err << "\n";
    return os.str();
  }

  std::string summary() const {
    std::ostringstream os;
    os << "suite=" << suite << " cases=" << rows.size() << " max_err=" << max_err
       << " tol=" << tolerance << " -> " << (pass ? "PASS" : "FAIL");
    return os.str();
  }
};

namespace sweeps {

inline const std::vector<std::size_t>& leaf_sizes() {
  static const std::vector<std::size_t> sizes = {2, 4, 8, 16};
  return sizes;
}

inline std::pair<std::size_t, std::size_t> cluster_shape(std::size_t n_leaves) {
  switch (n_leaves) {
    case 2: return {2, 1};
    case 4: return {2, 2};
    case 8: return {4, 2};
    case 16: return {4, 4};
    default: return {2, n_leaves / 2};
  }
}

// |twd - exact LP under shortest-path costs| over TV, cluster and chain
// topologies. Chain gaps are redrawn per trial.
inline SweepReport twd_lp_sweep(std::size_t trials, std::uint64_t seed,
                                const std::vector<TreeTopology>& extra = {}) {
  SweepReport report;
  report.suite = "twd-lp";
  report.col_a = "twd";
  report.col_b = "lp_value";
  report.tolerance = 1e-9;
  Rng rng = Rng::substream(seed, "twd-lp");

  auto run_cell = [&](const std::string& name, const TreeTopology& t, std::size_t trial) {
    const SimplexVector a = SimplexVector::random(t.n_leaves, rng);
    const SimplexVector b = SimplexVector::random(t.n_leaves, rng);
    const double closed = twd(t, a, b);
    const Tensor costs = shortest_path_matrix(t);
    const double lp = solve_ot_exact(costs, a, b).value;
    report.add(name, t.n_leaves, trial, closed, lp, std::abs(closed - lp));
  };

  for (std::size_t n : leaf_sizes()) {
    const TreeTopology tv = build_tv_tree(n, 0.5);
    const auto [clusters, per] = cluster_shape(n);
    const TreeTopology cluster = build_cluster_tree(clusters, per, 0.5, 0.5);
    for (std::size_t trial = 0; trial < trials; ++trial) {
      run_cell("tv", tv, trial);
      run_cell("cluster", cluster, trial);
      std::vector<double> gaps(2 * n, 0.0);
      for (std::size_t k = 1; k < n; ++k) gaps[k] = rng.uniform(0.1, 2.0);
      run_cell("chain", build_chain_tree(n, gaps), trial);
    }
  }
  for (const auto& t : extra)
    for (std::size_t trial = 0; trial < trials; ++trial) run_cell("fixture:" + t.kind, t, trial);
  report.finalize();
  return report;
}

// |rtwd LP - total variation| over the same topology grid.
inline SweepReport rtwd_tv_sweep(std::size_t trials, std::uint64_t seed,
                                 const std::vector<TreeTopology>& extra = {}) {
  SweepReport report;
  report.suite = "rtwd-tv";
  report.col_a = "rtwd_lp";
  report.col_b = "tv";
  report.tolerance = 1e-7;
  Rng rng = Rng::substream(seed, "rtwd-tv");

  auto run_cell = [&](const std::string& name, const TreeTopology& t, std::size_t trial) {
    const SimplexVector a = SimplexVector::random(t.n_leaves, rng);
    const SimplexVector b = SimplexVector::random(t.n_leaves, rng);
    const double lp = rtwd_bruteforce(t, a, b);
    const double tv = total_variation(a, b);
    report.add(name, t.n_leaves, trial, lp, tv, std::abs(lp - tv));
  };

  for (std::size_t n : leaf_sizes()) {
    const TreeTopology tv = build_tv_tree(n, 0.5);
    const auto [clusters, per] = cluster_shape(n);
    const TreeTopology cluster = build_cluster_tree(clusters, per, 0.5, 0.5);
    const TreeTopology chain = build_chain_tree_uniform(n, 1.0);
    for (std::size_t trial = 0; trial < trials; ++trial) {
      run_cell("tv", tv, trial);
      run_cell("cluster", cluster, trial);
      run_cell("chain", chain, trial);
    }
  }
  for (const auto& t : extra)
    for (std::size_t trial = 0; trial < trials; ++trial) run_cell("fixture:" + t.kind, t, trial);
  report.finalize();
  return report;
}

// Topologies with B^T w = 1, where the Jeffrey bound applies.
inline std::vector<std::pair<std::string, TreeTopology>> unit_weight_topologies() {
  std::vector<std::pair<std::string, TreeTopology>> out;
  for (std::size_t n : leaf_sizes()) {
    out.emplace_back("tv-unit", build_tv_tree(n, 1.0));
    const auto [clusters, per] = cluster_shape(n);
    out.emplace_back("cluster", build_cluster_tree(clusters, per, 0.5, 0.5));
  }
  return out;
}

// Violation of W^2 <= JD (positive err means the bound broke).
inline SweepReport jd_bound_sweep(std::size_t trials, std::uint64_t seed) {
  SweepReport report;
  report.suite = "jd-bound";
  report.col_a = "w_squared";
  report.col_b = "jd";
  report.tolerance = 1e-12;
  Rng rng = Rng::substream(seed, "jd-bound");
  for (const auto& [name, t] : unit_weight_topologies()) {
    for (std::size_t trial = 0; trial < trials; ++trial) {
      const SimplexVector a = SimplexVector::random(t.n_leaves, rng);
      const SimplexVector b = SimplexVector::random(t.n_leaves, rng);
      const double w = twd(t, a, b);
      const double jd = jeffrey_divergence(t, a, b);
      report.add(name, t.n_leaves, trial, w * w, jd, std::max(0.0, w * w - jd));
    }
  }
  report.finalize();
  return report;
}

// Violation of ||p - q||_1 <= sqrt(2 KL(p||q)) on tree embeddings.
inline SweepReport pinsker_sweep(std::size_t trials, std::uint64_t seed) {
  SweepReport report;
  report.suite = "pinsker";
  report.col_a = "l1";
  report.col_b = "sqrt_2kl";
  report.tolerance = 1e-12;
  Rng rng = Rng::substream(seed, "pinsker");
  for (const auto& [name, t] : unit_weight_topologies()) {
    for (std::size_t trial = 0; trial < trials; ++trial) {
      const SimplexVector a = SimplexVector::random(t.n_leaves, rng);
      const SimplexVector b = SimplexVector::random(t.n_leaves, rng);
      const Tensor pa = tree_embed(t, a);
      const Tensor pb = tree_embed(t, b);
      std::vector<double> p(pa.data(), pa.data() + pa.numel());
      std::vector<double> q(pb.data(), pb.data() + pb.numel());
      double l1 = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) l1 += std::abs(p[i] - q[i]);
      const double bound = std::sqrt(2.0 * kl_divergence(p, q));
      report.add(name, t.n_leaves, trial, l1, bound, std::max(0.0, l1 - bound));
    }
  }
  report.finalize();
  return report;
}

// Sinkhorn value against the exact LP on random 8x8 instances at
// lambda = 0.01 * mean cost; err is the relative value gap. Plan marginals
// must independently stay within 1e-6.
inline SweepReport sinkhorn_sweep(std::size_t trials, std::uint64_t seed) {
  SweepReport report;
  report.suite = "sinkhorn";
  report.col_a = "sinkhorn_value";
  report.col_b = "lp_value";
  report.tolerance = 0.01;
  Rng rng = Rng::substream(seed, "sinkhorn");
  const std::size_t n = 8;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Tensor cost({n, n});
    double mean_cost = 0.0;
    for (std::size_t i = 0; i < cost.numel(); ++i) {
      cost[i] = rng.uniform();
      mean_cost += cost[i];
    }
    mean_cost /= static_cast<double>(cost.numel());
    const SimplexVector a = SimplexVector::random(n, rng);
    const SimplexVector b = SimplexVector::random(n, rng);
    const double lp = solve_ot_exact(cost, a, b).value;
    const TransportPlan plan = sinkhorn(cost, a, b, 0.01 * mean_cost, 500000, 1e-8);
    check(plan.marginal_residual <= 1e-6,
          "sinkhorn sweep: marginal residual " + std::to_string(plan.marginal_residual));
    const double rel = std::abs(plan.value - lp) / lp;
    report.add("random8x8", n, trial, plan.value, lp, rel);
  }
  report.finalize();
  return report;
}

namespace detail {

// Smallest absolute embedded coordinate difference over every anchor/pool
// pairing that the InfoNCE loss touches; used to reject near-kink draws.
inline double min_embedded_gap(const TreeTopology& t, const Tensor& a1, const Tensor& a2) {
  const Tensor m = transpose(t.embed_matrix());
  const Tensor e1 = matmul(a1, m);
  const Tensor e2 = matmul(a2, m);
  const Tensor pool = concat_rows(e1, e2);
  const std::size_t r = e1.rows();
  double best = 1e300;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < pool.rows(); ++k) {
      if (k == i) continue;  // self pairing is masked out of the loss
      for (std::size_t c = 0; c < e1.cols(); ++c)
        best = std::min(best, std::abs(e1.at(i, c) - pool.at(k, c)));
    }
  return best;
}

}  // namespace detail

// Finite-difference checks of the full loss graphs at random non-kink
// points: InfoNCE-TWD with JD regularization w.r.t. shared encoder weights,
// and SimSiam-TWD w.r.t. predictor weights (the differentiable path).
inline SweepReport gradcheck_sweep(std::size_t trials, std::uint64_t seed) {
  SweepReport report;
  report.suite = "gradcheck";
  report.col_a = "max_rel_err";
  report.col_b = "h";
  report.tolerance = 1e-4;
  Rng rng = Rng::substream(seed, "gradcheck");
  const std::size_t batch = 4, d_in = 5, d = 6;
  const double h = 1e-6;

  for (std::size_t trial = 0; trial < trials; ++trial) {
    const bool use_cluster = trial % 2 == 1;
    const TreeTopology t =
        use_cluster ? build_cluster_tree(3, 2, 0.5, 0.5) : build_tv_tree(d, 0.5);

    Tensor x1({batch, d_in}), x2({batch, d_in}), w({d_in, d}), pw({d, d});
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (std::size_t i = 0; i < x1.numel(); ++i) x1[i] = rng.normal();
      for (std::size_t i = 0; i < x2.numel(); ++i) x2[i] = rng.normal();
      for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal();
      for (std::size_t i = 0; i < pw.numel(); ++i) pw[i] = 0.5 * rng.normal();
      const Tensor z1 = matmul(x1, w), z2 = matmul(x2, w);
      const Tensor a1 = softmax_rows(z1), a2 = softmax_rows(z2);
      const Tensor p1 = softmax_rows(matmul(z1, pw)), p2 = softmax_rows(matmul(z2, pw));
      const Tensor m = transpose(t.embed_matrix());
      auto pair_gap = [&](const Tensor& u, const Tensor& v) {
        const Tensor eu = matmul(u, m), ev = matmul(v, m);
        double best = 1e300;
        for (std::size_t i = 0; i < eu.numel(); ++i)
          best = std::min(best, std::abs(eu[i] - ev[i]));
        return best;
      };
      if (detail::min_embedded_gap(t, a1, a2) > 1e-4 && pair_gap(p1, a2) > 1e-4 &&
          pair_gap(p2, a1) > 1e-4)
        break;
    }

    {
      Graph g;
      NodeId wn = g.input(w);
      NodeId s1 = g.softmax_rows(g.matmul(g.constant(x1), wn));
      NodeId s2 = g.softmax_rows(g.matmul(g.constant(x2), wn));
      NodeId loss = infonce_twd_loss(g, s1, s2, t, 0.07, 0.1);
      const double err = g.grad_check(loss, wn, h);
      report.add(use_cluster ? "infonce-cluster" : "infonce-tv", d, trial, err, h, err);
    }
    {
      // SimSiam: check against the predictor weights, the branch whose
      // analytic gradient is the true derivative of the scalar loss.
      Graph g;
      NodeId pwn = g.input(pw);
      NodeId wn = g.input(w);
      NodeId z1 = g.matmul(g.constant(x1), wn);
      NodeId z2 = g.matmul(g.constant(x2), wn);
      NodeId p1 = g.softmax_rows(g.matmul(z1, pwn));
      NodeId p2 = g.softmax_rows(g.matmul(z2, pwn));
      NodeId inner1 = g.softmax_rows(z1);
      NodeId inner2 = g.softmax_rows(z2);
      NodeId t1 = g.stop_grad(inner1);
      NodeId t2 = g.stop_grad(inner2);
      NodeId loss = simsiam_twd_loss(g, p1, p2, t1, t2, t, 0.1);
      const double err = g.grad_check(loss, pwn, h);
      report.add(use_cluster ? "simsiam-cluster" : "simsiam-tv", d, trial, err, h, err);

      // Stop-gradient contract: nothing flows into the stopped branch even
      // though the shared weights under it do require gradients.
      g.backward(loss);
      for (NodeId blocked_node : {t1, t2, inner1, inner2}) {
        const Tensor blocked = g.adjoint(blocked_node);
        for (std::size_t i = 0; i < blocked.numel(); ++i)
          check(blocked[i] == 0.0, "gradcheck sweep: adjoint crossed a stop-gradient mark");
      }
    }
  }
  report.finalize();
  return report;
}

// Max deviation of K^T K and K K^T from the identity for d in {2..64}.
inline SweepReport dct_orth_sweep() {
  SweepReport report;
  report.suite = "dct-orth";
  report.col_a = "ktk_err";
  report.col_b = "kkt_err";
  report.tolerance = 1e-10;
  for (std::size_t d = 2; d <= 64; ++d) {
    const KeyMatrix key = dct_key_matrix(d);
    const Tensor ktk = matmul(transpose(key.k), key.k);
    const Tensor kkt = matmul(key.k, transpose(key.k));
    double err_ktk = 0.0, err_kkt = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double id = i == j ? 1.0 : 0.0;
        err_ktk = std::max(err_ktk, std::abs(ktk.at(i, j) - id));
        err_kkt = std::max(err_kkt, std::abs(kkt.at(i, j) - id));
      }
    report.add("dct", d, d, err_ktk, err_kkt, std::max(err_ktk, err_kkt));
  }
  report.finalize();
  return report;
}

}  // namespace sweeps

inline SweepReport run_verify_suite(const std::string& suite, std::size_t trials,
                                    std::uint64_t seed,
                                    const std::vector<TreeTopology>& fixtures = {}) {
  if (suite == "twd-lp") return sweeps::twd_lp_sweep(trials, seed, fixtures);
  if (suite == "rtwd-tv") return sweeps::rtwd_tv_sweep(trials, seed, fixtures);
  if (suite == "jd-bound") return sweeps::jd_bound_sweep(trials, seed);
  if (suite == "pinsker") return sweeps::pinsker_sweep(trials, seed);
  if (suite == "sinkhorn") return sweeps::sinkhorn_sweep(trials, seed);
  if (suite == "gradcheck") return sweeps::gradcheck_sweep(trials, seed);
  if (suite == "dct-orth") return sweeps::dct_orth_sweep();
  fail("unknown verification suite '" + suite +
       "' (twd-lp|rtwd-tv|jd-bound|pinsker|sinkhorn|gradcheck|dct-orth)");
}

inline const std::vector<std::string>& all_verify_suites() {
  static const std::vector<std::string> names = {
      "twd-lp", "rtwd-tv", "jd-bound", "pinsker", "sinkhorn", "gradcheck", "dct-orth"};
  return names;
}

}  // namespace twassl
