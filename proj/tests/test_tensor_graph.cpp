#include <doctest.h>

#include <cmath>
#include <vector>

#include "twassl/graph.hpp"
#include "twassl/rng.hpp"
#include "twassl/tensor.hpp"

using namespace twassl;

TEST_CASE("tensor shape and data invariants") {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
}

TEST_CASE("forward: relu, softmax and L1 fixed values") {
  Graph g;
  NodeId x = g.input(Tensor::vec({-1.0, 2.0}));
  NodeId y = g.relu(x);
  const Tensor& v = g.forward(y);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 2.0);

  NodeId s = g.softmax_rows(g.input(Tensor::vec({0.0, 0.0})));
  CHECK(g.forward(s)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g.forward(s)[1] == doctest::Approx(0.5).epsilon(1e-15));

  // |0.3 - 0.7| + |0.7 - 0.3| = 0.8
  NodeId a = g.input(Tensor::scalar(0.3));
  NodeId b = g.input(Tensor::scalar(0.7));
  NodeId total = g.add(g.abs(g.sub(a, b)), g.abs(g.sub(b, a)));
  CHECK(g.forward(total).item() == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("forward is idempotent and bit-deterministic") {
  Graph g;
  Rng rng(7);
  Tensor x({3, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  NodeId xin = g.input(x);
  NodeId y = g.sum(g.softmax_rows(g.relu(xin)));
  const double first = g.forward(y).item();
  const double second = g.forward(y).item();
  CHECK(first == second);

  g.backward(y);
  Tensor g1 = g.adjoint(xin);
  g.backward(y);
  Tensor g2 = g.adjoint(xin);
  for (std::size_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("forward errors: unbound leaf and non-finite intermediate") {
  Graph g;
  NodeId p = g.placeholder({2});
  NodeId y = g.sum(p);
  CHECK_THROWS_WITH_AS(g.forward(y), doctest::Contains("unbound leaf"), Error);
  g.set_input(p, Tensor::vec({1.0, 2.0}));
  CHECK(g.forward(y).item() == 3.0);

  Graph g2;
  NodeId big = g2.input(Tensor::vec({1000.0}));
  CHECK_THROWS_WITH_AS(g2.exp(big), doctest::Contains("non-finite"), Error);
}

TEST_CASE("backward: stop-gradient contract") {
  Graph g;
  NodeId x = g.input(Tensor::scalar(2.0));
  NodeId w = g.input(Tensor::scalar(3.0));
  NodeId y = g.mul(g.stop_grad(x), w);
  CHECK(g.forward(y).item() == 6.0);
  g.backward(y);
  CHECK(g.adjoint(x)[0] == 0.0);
  CHECK(g.adjoint(w)[0] == 2.0);
}

TEST_CASE("backward: sum of softmax has zero gradient") {
  Graph g;
  NodeId x = g.input(Tensor::vec({0.3, -1.2, 2.0}));
  NodeId y = g.sum(g.softmax_rows(x));
  g.backward(y);
  const Tensor grad = g.adjoint(x);
  for (std::size_t i = 0; i < grad.numel(); ++i)
    CHECK(std::abs(grad[i]) < 1e-15);
}

TEST_CASE("backward: L1 distance gradient matches sign and central differences") {
  Graph g;
  const std::vector<double> xv = {0.9, -0.4, 2.2};
  const std::vector<double> cv = {0.1, 0.6, -1.0};
  NodeId x = g.input(Tensor::vec(xv));
  NodeId c = g.constant(Tensor::vec(cv));
  NodeId y = g.sum(g.abs(g.sub(x, c)));
  g.backward(y);
  const Tensor grad = g.adjoint(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = xv[i] - cv[i] > 0 ? 1.0 : -1.0;
    CHECK(grad[i] == expected);
  }
  CHECK(g.grad_check(y, x, 1e-6) < 1e-7);
}

TEST_CASE("backward requires a scalar root; disconnected leaf gets zeros") {
  Graph g;
  NodeId x = g.input(Tensor::vec({1.0, 2.0}));
  NodeId unused = g.input(Tensor::vec({5.0, 5.0}));
  NodeId y = g.sum(x);
  CHECK_THROWS_AS(g.backward(x), Error);
  g.backward(y);
  const Tensor dz = g.adjoint(unused);
  CHECK(dz.numel() == 2);
  CHECK(dz[0] == 0.0);
  CHECK(dz[1] == 0.0);
}

TEST_CASE("grad_check: quadratic is exact to roundoff") {
  Graph g;
  NodeId x = g.input(Tensor::vec({1.0, 2.0}));
  NodeId y = g.scale(g.sum(g.mul(x, x)), 0.5);
  CHECK(g.grad_check(y, x, 1e-6) < 1e-7);
}

TEST_CASE("grad_check: log-sum-exp composition") {
  Graph g;
  NodeId x = g.input(Tensor::vec({0.2, -0.5, 1.3, 0.0}));
  NodeId y = g.log(g.sum(g.exp(x)));
  CHECK(g.grad_check(y, x, 1e-6) < 1e-6);
}

namespace {

// Draws entries away from zero so abs/relu kinks cannot sit within h.
Tensor random_nonkink(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double v = 0.0;
    do {
      v = rng.normal();
    } while (std::abs(v) < 1e-3);
    t[i] = v;
  }
  return t;
}

}  // namespace

TEST_CASE("grad_check across the op catalogue at random non-kink points") {
  Rng rng(99);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Tensor a = random_nonkink(3, 4, rng);
    Tensor b = random_nonkink(3, 4, rng);
    Tensor m = random_nonkink(4, 2, rng);
    Tensor bias = random_nonkink(1, 4, rng);

    {
      Graph g;
      NodeId x = g.input(a);
      NodeId y = g.mean(g.relu(g.matmul(x, g.constant(m))));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId y = g.sum(g.abs(g.add(x, g.constant(b))));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId y = g.sum(g.log(g.add_scalar(g.exp(g.scale(x, 0.3)), 1.0)));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId y = g.sum(g.mul(g.softmax_rows(x), g.constant(b)));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId y = g.sum(g.mul(g.l2_normalize_rows(x), g.constant(b)));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId y = g.sum(g.row_sum(g.add_rowvec(x, g.input(reshape(bias, {4})))));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId z = g.input(b);
      NodeId y = g.sum(g.abs(g.concat_rows(x, z)));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
      worst = std::max(worst, g.grad_check(y, z, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId y = g.sum(g.reshape(g.transpose(x), {12}));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId z = g.input(b);
      NodeId y = g.mean(g.pairwise_l1(x, z));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
      worst = std::max(worst, g.grad_check(y, z, 1e-6));
    }
    {
      Graph g;
      NodeId x = g.input(a);
      NodeId z = g.input(b);
      NodeId y = g.mean(g.rowwise_l1(x, z));
      worst = std::max(worst, g.grad_check(y, x, 1e-6));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("adjoint through stop_grad follows only the open path") {
  // y = stop(x) * x: the analytic derivative is the stopped forward value,
  // not the 2x a full derivative would give.
  Graph g;
  NodeId x = g.input(Tensor::scalar(1.5));
  NodeId y = g.mul(g.stop_grad(x), x);
  g.backward(y);
  CHECK(g.adjoint(x)[0] == 1.5);
}

TEST_CASE("set_input rejects shape changes on rebind") {
  Graph g;
  NodeId x = g.input(Tensor::vec({1.0, 2.0}));
  CHECK_THROWS_AS(g.set_input(x, Tensor::vec({1.0, 2.0, 3.0})), Error);
}
