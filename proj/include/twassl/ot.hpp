#pragma once
// Ground-truth optimal-transport solvers used for verification and
// benchmarking: exact 1-Wasserstein by linear programming, entropic
// regularized OT in the log domain, and the robust-TWD weight LP.
//
// The LP solver is a dense two-phase simplex with Bland's anti-cycling rule;
// desk-scale instances (<= 4096 variables) do not need a network-flow
// specialization, and one solver serves both oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/distances.hpp"
#include "twassl/tensor.hpp"
#include "twassl/tree.hpp"

namespace twassl {

struct LpProblem {
  std::vector<double> objective;   // minimize objective . x
  Tensor eq_matrix;                // m x n equality constraints
  std::vector<double> eq_rhs;      // length m
  // All variables are bounded below by zero.
};

struct LpSolution {
  std::vector<double> x;
  double objective = 0.0;
  std::size_t pivots = 0;
};

namespace detail {

constexpr double kPivotTol = 1e-11;
constexpr double kReducedCostTol = 1e-9;

struct SimplexTableau {
  std::size_t m = 0;       // constraint rows
  std::size_t n = 0;       // structural variables
  std::vector<double> t;   // m x (n + m + 1), artificials then rhs
  std::vector<std::size_t> basis;

  double& at(std::size_t r, std::size_t c) { return t[r * (n + m + 1) + c]; }
  double at(std::size_t r, std::size_t c) const { return t[r * (n + m + 1) + c]; }
  std::size_t rhs_col() const { return n + m; }

  void pivot(std::size_t pr, std::size_t pc) {
    const std::size_t width = n + m + 1;
    double* prow = &t[pr * width];
    const double pv = prow[pc];
    for (std::size_t c = 0; c < width; ++c) prow[c] /= pv;
    prow[pc] = 1.0;
    for (std::size_t r = 0; r < m; ++r) {
      if (r == pr) continue;
      double* row = &t[r * width];
      const double factor = row[pc];
      if (factor == 0.0) continue;
      for (std::size_t c = 0; c < width; ++c) row[c] -= factor * prow[c];
      row[pc] = 0.0;
    }
    basis[pr] = pc;
  }
};

}  // namespace detail

// Minimizes objective . x subject to eq_matrix x = eq_rhs, x >= 0.
// Deterministic: Bland's rule everywhere, smallest-index tie-breaks.
inline LpSolution lp_solve(const LpProblem& p) {
  const std::size_t m = p.eq_rhs.size();
  const std::size_t n = p.objective.size();
  check(p.eq_matrix.rows() == m && p.eq_matrix.cols() == n,
        "lp_solve: constraint matrix shape mismatch");
  check(n >= 1, "lp_solve: no variables");

  detail::SimplexTableau tab;
  tab.m = m;
  tab.n = n;
  tab.t.assign(m * (n + m + 1), 0.0);
  tab.basis.resize(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double sgn = p.eq_rhs[r] < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < n; ++c) tab.at(r, c) = sgn * p.eq_matrix.at(r, c);
    tab.at(r, n + r) = 1.0;
    tab.at(r, tab.rhs_col()) = sgn * p.eq_rhs[r];
    tab.basis[r] = n + r;
  }

  const std::size_t max_pivots = 20000 + 50 * (n + m);
  std::size_t pivots = 0;

  auto run_phase = [&](const std::vector<double>& cost, bool allow_artificial) {
    std::vector<double> reduced(n + m);
    for (;;) {
      // Reduced costs r_j = c_j - c_B^T B^-1 A_j, recomputed from the tableau.
      for (std::size_t c = 0; c < n + m; ++c) reduced[c] = cost[c];
      for (std::size_t r = 0; r < m; ++r) {
        const double cb = cost[tab.basis[r]];
        if (cb == 0.0) continue;
        for (std::size_t c = 0; c < n + m; ++c) reduced[c] -= cb * tab.at(r, c);
      }
      std::size_t entering = n + m;
      const std::size_t limit = allow_artificial ? n + m : n;
      for (std::size_t c = 0; c < limit; ++c) {
        if (reduced[c] < -detail::kReducedCostTol) {
          entering = c;  // Bland: smallest index
          break;
        }
      }
      if (entering == n + m) return;  // optimal for this phase

      std::size_t leaving = m;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < m; ++r) {
        const double coef = tab.at(r, entering);
        if (coef > detail::kPivotTol) {
          const double ratio = tab.at(r, tab.rhs_col()) / coef;
          if (ratio < best_ratio - 1e-12 ||
              (ratio < best_ratio + 1e-12 &&
               (leaving == m || tab.basis[r] < tab.basis[leaving]))) {
            best_ratio = ratio;
            leaving = r;
          }
        }
      }
      if (leaving == m) fail("lp_solve: problem is unbounded");
      tab.pivot(leaving, entering);
      if (++pivots > max_pivots) fail("lp_solve: cycling guard exceeded");
    }
  };

  // Phase 1: drive the artificial variables to zero.
  std::vector<double> phase1_cost(n + m, 0.0);
  for (std::size_t c = n; c < n + m; ++c) phase1_cost[c] = 1.0;
  run_phase(phase1_cost, true);

  double infeasibility = 0.0;
  for (std::size_t r = 0; r < m; ++r)
    if (tab.basis[r] >= n) infeasibility += tab.at(r, tab.rhs_col());
  if (infeasibility > 1e-8) fail("lp_solve: infeasible (phase-1 objective " +
                                 std::to_string(infeasibility) + ")");

  // Pivot out artificials stuck in the basis at level zero. Rows with no
  // structural coefficient left are redundant and stay parked at zero.
  for (std::size_t r = 0; r < m; ++r) {
    if (tab.basis[r] < n) continue;
    for (std::size_t c = 0; c < n; ++c) {
      if (std::abs(tab.at(r, c)) > 1e-9) {
        tab.pivot(r, c);
        ++pivots;
        break;
      }
    }
  }

  // Phase 2 over the real objective; artificials may not re-enter.
  std::vector<double> phase2_cost(n + m, 0.0);
  for (std::size_t c = 0; c < n; ++c) phase2_cost[c] = p.objective[c];
  run_phase(phase2_cost, false);

  LpSolution sol;
  sol.x.assign(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    if (tab.basis[r] < n) sol.x[tab.basis[r]] = std::max(0.0, tab.at(r, tab.rhs_col()));
  sol.objective = 0.0;
  for (std::size_t c = 0; c < n; ++c) sol.objective += p.objective[c] * sol.x[c];
  sol.pivots = pivots;

  // Feasibility residual check on the way out.
  for (std::size_t r = 0; r < m; ++r) {
    double lhs = 0.0;
    for (std::size_t c = 0; c < n; ++c) lhs += p.eq_matrix.at(r, c) * sol.x[c];
    if (std::abs(lhs - p.eq_rhs[r]) > 1e-9)
      fail("lp_solve: solution violates constraint " + std::to_string(r) + " by " +
           std::to_string(std::abs(lhs - p.eq_rhs[r])));
  }
  return sol;
}

// Coupling matrix with prescribed marginals plus its transport cost.
struct TransportPlan {
  Tensor plan;                     // nonnegative, row sums = a, column sums = b
  double value = 0.0;              // transport cost of the plan (no entropy term)
  std::size_t iterations = 0;
  double marginal_residual = 0.0;  // max per-entry marginal violation
  std::vector<double> residual_history;  // Sinkhorn only: L1 marginal error
                                         // per iteration, non-increasing
};

// Exact 1-Wasserstein via the transportation LP. Desk scale: n*m <= 4096.
inline TransportPlan solve_ot_exact(const Tensor& cost, const SimplexVector& a,
                                    const SimplexVector& b) {
  const std::size_t n = cost.rows(), m = cost.cols();
  check(a.size() == n && b.size() == m, "solve_ot_exact: marginal lengths do not match cost");
  check(n * m <= 4096, "solve_ot_exact: size cap exceeded (n*m > 4096)");

  LpProblem p;
  p.objective.assign(n * m, 0.0);
  for (std::size_t i = 0; i < n * m; ++i) p.objective[i] = cost[i];
  p.eq_matrix = Tensor({n + m, n * m});
  p.eq_rhs.assign(n + m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    p.eq_rhs[i] = a[i];
    for (std::size_t j = 0; j < m; ++j) p.eq_matrix.at(i, i * m + j) = 1.0;
  }
  for (std::size_t j = 0; j < m; ++j) {
    p.eq_rhs[n + j] = b[j];
    for (std::size_t i = 0; i < n; ++i) p.eq_matrix.at(n + j, i * m + j) = 1.0;
  }

  const LpSolution sol = lp_solve(p);

  TransportPlan out;
  out.plan = Tensor({n, m}, sol.x);
  out.value = sol.objective;
  out.iterations = sol.pivots;
  double resid = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += out.plan.at(i, j);
    resid = std::max(resid, std::abs(s - a[i]));
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += out.plan.at(i, j);
    resid = std::max(resid, std::abs(s - b[j]));
  }
  out.marginal_residual = resid;
  check(resid <= 1e-8, "solve_ot_exact: plan marginals off by " + std::to_string(resid));
  return out;
}

// Entropic-regularized OT by log-domain Sinkhorn iterations. Marginals are
// smoothed by 1e-12 and renormalized so softmax-derived inputs that underflow
// to zero stay strictly positive. Throws when the marginal residual does not
// reach tol within max_iter.
inline TransportPlan sinkhorn(const Tensor& cost, const SimplexVector& a, const SimplexVector& b,
                              double lambda, std::size_t max_iter = 10000, double tol = 1e-9) {
  check(lambda > 0.0, "sinkhorn: lambda must be positive");
  const std::size_t n = cost.rows(), m = cost.cols();
  check(a.size() == n && b.size() == m, "sinkhorn: marginal lengths do not match cost");

  auto smoothed = [](const SimplexVector& v) {
    std::vector<double> out(v.size());
    const double z = 1.0 + 1e-12 * static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] + 1e-12) / z;
    return out;
  };
  const std::vector<double> pa = smoothed(a);
  const std::vector<double> pb = smoothed(b);

  std::vector<double> log_a(n), log_b(m);
  for (std::size_t i = 0; i < n; ++i) log_a[i] = std::log(pa[i]);
  for (std::size_t j = 0; j < m; ++j) log_b[j] = std::log(pb[j]);

  std::vector<double> log_kernel(n * m);
  for (std::size_t i = 0; i < n * m; ++i) log_kernel[i] = -cost[i] / lambda;

  std::vector<double> log_u(n, 0.0), log_v(m, 0.0);
  auto lse = [](const double* vals, std::size_t count, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) mx = std::max(mx, vals[k * stride]);
    double s = 0.0;
    for (std::size_t k = 0; k < count; ++k) s += std::exp(vals[k * stride] - mx);
    return mx + std::log(s);
  };

  TransportPlan out;
  out.plan = Tensor({n, m});
  std::vector<double> scratch(std::max(n, m));

  for (std::size_t it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) scratch[j] = log_kernel[i * m + j] + log_v[j];
      log_u[i] = log_a[i] - lse(scratch.data(), m, 1);
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) scratch[i] = log_kernel[i * m + j] + log_u[i];
      log_v[j] = log_b[j] - lse(scratch.data(), n, 1);
    }

    double resid_max = 0.0, resid_l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        out.plan.at(i, j) = std::exp(log_u[i] + log_kernel[i * m + j] + log_v[j]);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += out.plan.at(i, j);
      resid_max = std::max(resid_max, std::abs(s - pa[i]));
      resid_l1 += std::abs(s - pa[i]);
    }
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += out.plan.at(i, j);
      resid_max = std::max(resid_max, std::abs(s - pb[j]));
      resid_l1 += std::abs(s - pb[j]);
    }
    out.residual_history.push_back(resid_l1);
    out.iterations = it;
    out.marginal_residual = resid_max;
    if (resid_max <= tol) break;
  }
  if (out.marginal_residual > tol)
    fail("sinkhorn: no convergence in " + std::to_string(max_iter) +
         " iterations (marginal residual " + std::to_string(out.marginal_residual) + ")");

  out.value = 0.0;
  for (std::size_t i = 0; i < n * m; ++i) out.value += out.plan[i] * cost[i];
  return out;
}

// Robust TWD by direct LP over the feasible edge-weight polytope:
// maximize (1/2) sum_j w_j |[B(a - a')]_j| subject to B^T w = 1, w >= 0.
// Verification oracle for the total-variation closed form.
inline double rtwd_bruteforce(const TreeTopology& t, const SimplexVector& a,
                              const SimplexVector& b) {
  check(t.n_nodes <= 64, "rtwd_bruteforce: topology too large (n_nodes > 64)");
  check(a.size() == t.n_leaves && b.size() == t.n_leaves,
        "rtwd_bruteforce: vector length does not match leaf count");

  LpProblem p;
  p.objective.assign(t.n_nodes, 0.0);
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t.n_leaves; ++j)
      if (t.ancestor(i, j)) s += a[j] - b[j];
    p.objective[i] = -0.5 * std::abs(s);  // negate: lp_solve minimizes
  }
  p.eq_matrix = Tensor({t.n_leaves, t.n_nodes});
  p.eq_rhs.assign(t.n_leaves, 1.0);
  for (std::size_t j = 0; j < t.n_leaves; ++j)
    for (std::size_t i = 0; i < t.n_nodes; ++i)
      p.eq_matrix.at(j, i) = t.ancestor(i, j) ? 1.0 : 0.0;

  const LpSolution sol = lp_solve(p);
  return -sol.objective;
}

}  // namespace twassl
