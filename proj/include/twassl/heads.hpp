#pragma once
// Differentiable maps from encoder outputs to simplex vectors: softmax,
// simplicial embedding (blockwise softmax), and the normalized-key softmax
// family with learned, sinusoidal (positional-encoding) or DCT key matrices.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/graph.hpp"
#include "twassl/rng.hpp"
#include "twassl/tensor.hpp"
#include "twassl/tree.hpp"

namespace twassl {

enum class HeadKind { Softmax, Sem, ArcFaceLearned, ArcFacePE, ArcFaceDCT };

inline const char* head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::Softmax: return "softmax";
    case HeadKind::Sem: return "sem";
    case HeadKind::ArcFaceLearned: return "af";
    case HeadKind::ArcFacePE: return "af_pe";
    case HeadKind::ArcFaceDCT: return "af_dct";
  }
  return "?";
}

inline HeadKind head_kind_from_name(const std::string& s) {
  if (s == "softmax") return HeadKind::Softmax;
  if (s == "sem") return HeadKind::Sem;
  if (s == "af") return HeadKind::ArcFaceLearned;
  if (s == "af_pe") return HeadKind::ArcFacePE;
  if (s == "af_dct") return HeadKind::ArcFaceDCT;
  fail("unknown head kind '" + s + "' (softmax|sem|af|af_pe|af_dct)");
}

inline bool head_uses_key(HeadKind k) {
  return k == HeadKind::ArcFaceLearned || k == HeadKind::ArcFacePE || k == HeadKind::ArcFaceDCT;
}

struct HeadConfig {
  HeadKind kind = HeadKind::Softmax;
  std::size_t d_out = 32;   // encoder output width
  std::size_t d_prob = 32;  // simplex dimension; equals d_out (square key)
  std::size_t sem_blocks = 8;     // L
  std::size_t sem_block_dim = 4;  // V
  double eta = 0.1;               // key-softmax temperature

  void validate() const {
    check(d_out >= 1 && d_prob >= 1, "head: dimensions must be positive");
    check(d_out == d_prob, "head: d_out must equal d_prob (square key matrix)");
    if (kind == HeadKind::Sem)
      check(sem_blocks * sem_block_dim == d_prob,
            "head: SEM requires L*V = d_prob (got " + std::to_string(sem_blocks) + "*" +
                std::to_string(sem_block_dim) + " != " + std::to_string(d_prob) + ")");
    if (head_uses_key(kind)) check(eta > 0.0, "head: eta must be positive");
  }
};

// d_out x d_prob matrix whose columns are unit-norm keys.
struct KeyMatrix {
  Tensor k;

  std::size_t d_out() const { return k.rows(); }
  std::size_t d_prob() const { return k.cols(); }

  double max_column_norm_error() const {
    double worst = 0.0;
    for (std::size_t j = 0; j < k.cols(); ++j) {
      double sq = 0.0;
      for (std::size_t i = 0; i < k.rows(); ++i) sq += k.at(i, j) * k.at(i, j);
      worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
    }
    return worst;
  }

  void renormalize_columns() {
    for (std::size_t j = 0; j < k.cols(); ++j) {
      double sq = 0.0;
      for (std::size_t i = 0; i < k.rows(); ++i) sq += k.at(i, j) * k.at(i, j);
      const double norm = std::sqrt(sq);
      check(norm > 0.0, "KeyMatrix: zero column " + std::to_string(j));
      for (std::size_t i = 0; i < k.rows(); ++i) k.at(i, j) /= norm;
    }
  }
};

// Sinusoidal positional-encoding keys: column i alternates
// sin(i / 10000^(2j/d_out)) and cos(i / 10000^(2j/d_out)), then is normalized.
inline KeyMatrix pe_key_matrix(std::size_t d_out, std::size_t d_prob) {
  check(d_out >= 2 && d_out % 2 == 0, "pe_key_matrix: d_out must be even");
  KeyMatrix key;
  key.k = Tensor({d_out, d_prob});
  for (std::size_t i = 0; i < d_prob; ++i) {
    for (std::size_t j = 0; 2 * j < d_out; ++j) {
      const double freq =
          std::pow(10000.0, 2.0 * static_cast<double>(j) / static_cast<double>(d_out));
      const double angle = static_cast<double>(i) / freq;
      key.k.at(2 * j, i) = std::sin(angle);
      key.k.at(2 * j + 1, i) = std::cos(angle);
    }
  }
  key.renormalize_columns();
  return key;
}

// Orthonormal DCT-II matrix: row 0 is 1/sqrt(d), row i is
// sqrt(2/d) cos(pi (2j+1) i / (2d)). Satisfies K^T K = K K^T = I.
inline KeyMatrix dct_key_matrix(std::size_t d) {
  check(d >= 1, "dct_key_matrix: d must be positive");
  constexpr double pi = 3.14159265358979323846;
  KeyMatrix key;
  key.k = Tensor({d, d});
  const double dn = static_cast<double>(d);
  for (std::size_t j = 0; j < d; ++j) key.k.at(0, j) = 1.0 / std::sqrt(dn);
  for (std::size_t i = 1; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      key.k.at(i, j) = std::sqrt(2.0 / dn) *
                       std::cos(pi * (2.0 * static_cast<double>(j) + 1.0) *
                                static_cast<double>(i) / (2.0 * dn));
  return key;
}

// Random Gaussian columns, immediately normalized to unit length.
inline KeyMatrix random_key_matrix(std::size_t d_out, std::size_t d_prob, Rng& rng) {
  KeyMatrix key;
  key.k = Tensor({d_out, d_prob});
  for (std::size_t i = 0; i < key.k.numel(); ++i) key.k[i] = rng.normal();
  key.renormalize_columns();
  return key;
}

// ---- pure evaluations -------------------------------------------------------

inline SimplexVector softmax_head(const Tensor& f) {
  const Tensor y = softmax_rows(f);
  return SimplexVector(std::vector<double>(y.data(), y.data() + y.numel()));
}

// Concatenation of L block softmaxes, each scaled by 1/L; every block sums
// to 1/L so the whole vector sums to one.
inline SimplexVector sem_head(const Tensor& f, std::size_t blocks, std::size_t block_dim) {
  check(blocks >= 1 && block_dim >= 1, "sem_head: zero block shape");
  check(f.numel() == blocks * block_dim,
        "sem_head: input length " + std::to_string(f.numel()) + " is not L*V");
  const Tensor stacked = reshape(f, {blocks, block_dim});
  const Tensor y = scale(softmax_rows(stacked), 1.0 / static_cast<double>(blocks));
  return SimplexVector(std::vector<double>(y.data(), y.data() + y.numel()));
}

// Softmax over K^T f / eta with f normalized to the unit sphere first; both
// factors are unit norm, so logits live in [-1/eta, 1/eta].
inline SimplexVector arcface_head(const Tensor& f, const KeyMatrix& key, double eta) {
  check(eta > 0.0, "arcface_head: eta must be positive");
  check(f.numel() == key.d_out(), "arcface_head: input length does not match key rows");
  const Tensor fn = l2_normalize_rows(reshape(f, {1, f.numel()}));
  const Tensor logits = scale(matmul(fn, key.k), 1.0 / eta);
  const Tensor y = softmax_rows(logits);
  return SimplexVector(std::vector<double>(y.data(), y.data() + y.numel()));
}

// ---- differentiable batch nodes ----------------------------------------------

// Applies the head to every row of a (R x d_out) feature node, yielding a
// (R x d_prob) batch of simplex rows. For key heads, `key` must be a node
// holding the d_out x d_prob key matrix (input node if learned, constant
// otherwise).
inline NodeId head_node(Graph& g, const HeadConfig& cfg, NodeId features,
                        NodeId key = NodeId{}) {
  cfg.validate();
  switch (cfg.kind) {
    case HeadKind::Softmax:
      return g.softmax_rows(features);
    case HeadKind::Sem: {
      const std::size_t rows = g.value(features).rows();
      NodeId blocks = g.reshape(features, {rows * cfg.sem_blocks, cfg.sem_block_dim});
      NodeId soft = g.softmax_rows(blocks);
      NodeId scaled = g.scale(soft, 1.0 / static_cast<double>(cfg.sem_blocks));
      return g.reshape(scaled, {rows, cfg.d_prob});
    }
    case HeadKind::ArcFaceLearned:
    case HeadKind::ArcFacePE:
    case HeadKind::ArcFaceDCT: {
      check(key.valid(), "head_node: key node required for key-based heads");
      NodeId fn = g.l2_normalize_rows(features);
      NodeId logits = g.scale(g.matmul(fn, key), 1.0 / cfg.eta);
      return g.softmax_rows(logits);
    }
  }
  fail("head_node: unknown head kind");
}

}  // namespace twassl
