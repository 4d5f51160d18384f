#pragma once
// Dense row-major float64 tensors of rank 0..2, plus the pure math kernels
// the autodiff graph and the evaluation paths share.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "twassl/common.hpp"

namespace twassl {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(data_.size() == numel_of(shape_), "Tensor: data length does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vec(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-1 tensors are treated as a single row where a 2-D view is needed.
  std::size_t rows() const { return rank() <= 1 ? 1 : shape_[0]; }
  std::size_t cols() const {
    if (rank() == 0) return 1;
    return shape_.back();
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    check(numel() == 1, "Tensor::item: tensor is not scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// ---- pure kernels ---------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ " + a.shape_str() + " x " + b.shape_str());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * m;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = pb + l * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return out;
}

inline Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s;
  return out;
}

// Adds row vector b to every row of x.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  check(b.numel() == x.cols(), "add_rowvec: width mismatch");
  Tensor out = x;
  const std::size_t n = x.rows(), m = x.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) += b[j];
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return out;
}

inline Tensor exp(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return out;
}

inline Tensor log(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return out;
}

inline Tensor abs(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
  return out;
}

inline Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.rows(), m = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, out.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::exp(out.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= z;
  }
  return out;
}

inline Tensor l2_normalize_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.rows(), m = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m; ++j) sq += out.at(i, j) * out.at(i, j);
    const double norm = std::sqrt(sq);
    check(norm > 0.0, "l2_normalize_rows: zero row " + std::to_string(i));
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= norm;
  }
  return out;
}

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  return s;
}

inline Tensor row_sum(const Tensor& x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += x.at(i, j);
    out[i] = s;
  }
  return out;
}

inline Tensor col_sum(const Tensor& x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x.at(i, j);
  return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check(a.cols() == b.cols(), "concat_rows: width mismatch");
  const std::size_t m = a.cols();
  Tensor out({a.rows() + b.rows(), m});
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  return out;
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  check(Tensor::numel_of(shape) == a.numel(), "reshape: element count mismatch");
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.numel()));
}

// L1 distances between every row of x (n rows) and every row of y (k rows).
inline Tensor pairwise_l1(const Tensor& x, const Tensor& y) {
  check(x.cols() == y.cols(), "pairwise_l1: width mismatch");
  const std::size_t n = x.rows(), k = y.rows(), m = x.cols();
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * m;
    for (std::size_t j = 0; j < k; ++j) {
      const double* yj = y.data() + j * m;
      double s = 0.0;
      for (std::size_t l = 0; l < m; ++l) s += std::abs(xi[l] - yj[l]);
      out.at(i, j) = s;
    }
  }
  return out;
}

// L1 distance between paired rows of x and y.
inline Tensor rowwise_l1(const Tensor& x, const Tensor& y) {
  check(x.same_shape(y), "rowwise_l1: shape mismatch");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::abs(x.at(i, j) - y.at(i, j));
    out[i] = s;
  }
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  check(a.numel() == b.numel(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline Tensor row(const Tensor& x, std::size_t i) {
  const std::size_t m = x.cols();
  std::vector<double> v(x.data() + i * m, x.data() + (i + 1) * m);
  return Tensor::vec(std::move(v));
}

}  // namespace twassl
