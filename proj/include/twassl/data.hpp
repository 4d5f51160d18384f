#pragma once
// Synthetic class-structured datasets with two-view augmentation, CSV
// ingestion for small external datasets, and KNN evaluation under
// tree-Wasserstein, L1/total-variation or cosine metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/distances.hpp"
#include "twassl/rng.hpp"
#include "twassl/tensor.hpp"

namespace twassl {

struct AugmentSpec {
  double noise_sigma = 0.5;   // additive Gaussian noise per view
  double dropout_prob = 0.2;  // independent feature dropout per view

  void validate() const {
    check(noise_sigma >= 0.0, "augment: negative noise sigma");
    check(dropout_prob >= 0.0 && dropout_prob <= 1.0, "augment: dropout outside [0,1]");
  }
};

struct SyntheticSpec {
  std::size_t n_classes = 4;
  std::size_t d_in = 32;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  double center_scale = 0.5;  // keeps an untrained encoder below 0.8 TWD-KNN
  double noise_scale = 1.0;
  AugmentSpec augment;

  void validate() const {
    check(n_classes >= 1 && d_in >= 1 && train_per_class >= 1 && test_per_class >= 1,
          "synthetic: all counts must be positive");
    check(center_scale >= 0.0 && noise_scale >= 0.0, "synthetic: negative scale");
    augment.validate();
  }
};

struct LabeledSet {
  Tensor x;             // n x d_in
  std::vector<int> y;   // n labels

  std::size_t size() const { return y.size(); }
};

// Gaussian class clusters, deterministic given the seed; train and test are
// disjoint draws from the same stream.
inline std::pair<LabeledSet, LabeledSet> make_synthetic(const SyntheticSpec& spec,
                                                        std::uint64_t seed) {
  spec.validate();
  Rng rng = Rng::substream(seed, "data");

  Tensor centers({spec.n_classes, spec.d_in});
  for (std::size_t i = 0; i < centers.numel(); ++i)
    centers[i] = spec.center_scale * rng.normal();

  auto draw = [&](std::size_t per_class) {
    LabeledSet set;
    set.x = Tensor({spec.n_classes * per_class, spec.d_in});
    set.y.resize(spec.n_classes * per_class);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      for (std::size_t s = 0; s < per_class; ++s, ++row) {
        set.y[row] = static_cast<int>(c);
        for (std::size_t j = 0; j < spec.d_in; ++j)
          set.x.at(row, j) = centers.at(c, j) + spec.noise_scale * rng.normal();
      }
    }
    return set;
  };

  LabeledSet train = draw(spec.train_per_class);
  LabeledSet test = draw(spec.test_per_class);
  return {std::move(train), std::move(test)};
}

// Two independent augmentation draws of one source sample: additive Gaussian
// noise plus an independent feature-dropout mask per view.
inline std::pair<std::vector<double>, std::vector<double>> two_views(
    const std::vector<double>& x, const AugmentSpec& aug, Rng& rng) {
  aug.validate();
  auto view = [&]() {
    std::vector<double> u(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) u[j] = x[j] + aug.noise_sigma * rng.normal();
    if (aug.dropout_prob > 0.0)
      for (std::size_t j = 0; j < x.size(); ++j)
        if (rng.uniform() < aug.dropout_prob) u[j] = 0.0;
    return u;
  };
  std::vector<double> u1 = view();
  std::vector<double> u2 = view();
  return {std::move(u1), std::move(u2)};
}

// Two augmented views of a batch; row i of each side comes from the same
// source sample.
struct BatchViews {
  Tensor view1;
  Tensor view2;

  std::size_t size() const { return view1.rows(); }
};

// Augments the selected rows of a dataset into a paired two-view batch.
inline BatchViews two_view_batch(const Tensor& x, const std::vector<std::size_t>& rows,
                                 const AugmentSpec& aug, Rng& rng) {
  const std::size_t d = x.cols();
  Tensor v1({rows.size(), d});
  Tensor v2({rows.size(), d});
  std::vector<double> sample(d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) sample[j] = x.at(rows[i], j);
    auto [u1, u2] = two_views(sample, aug, rng);
    std::copy(u1.begin(), u1.end(), v1.data() + i * d);
    std::copy(u2.begin(), u2.end(), v2.data() + i * d);
  }
  return {std::move(v1), std::move(v2)};
}

namespace detail {

// Pairwise distances from each query row to each reference row.
inline Tensor metric_distances(const Tensor& queries, const Tensor& refs,
                               const DistanceKind& metric) {
  switch (metric.kind) {
    case MetricKind::TreeWasserstein: {
      check(queries.cols() == metric.topology.n_leaves,
            "knn: embedding width does not match topology leaf count");
      const Tensor m = transpose(metric.topology.embed_matrix());
      return pairwise_l1(matmul(queries, m), matmul(refs, m));
    }
    case MetricKind::TotalVariation:
      return scale(pairwise_l1(queries, refs), 0.5);
    case MetricKind::Cosine: {
      const Tensor qn = l2_normalize_rows(queries);
      const Tensor rn = l2_normalize_rows(refs);
      Tensor sims = matmul(qn, transpose(rn));
      Tensor out({queries.rows(), refs.rows()});
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 - sims[i];
      return out;
    }
  }
  fail("knn: unknown metric");
}

}  // namespace detail

// Majority vote over the K nearest training rows. Ties in the vote are
// broken by the smallest summed distance, then by the lowest class index.
// Neighbor selection orders by (distance, label, index), which keeps the
// result invariant under permutations of the training set.
inline double knn_classify(const Tensor& train_emb, const std::vector<int>& train_y,
                           const Tensor& test_emb, const std::vector<int>& test_y,
                           std::size_t k, const DistanceKind& metric) {
  check(train_emb.rows() == train_y.size(), "knn: train rows/labels mismatch");
  check(test_emb.rows() == test_y.size(), "knn: test rows/labels mismatch");
  check(train_y.size() >= 1, "knn: empty train set");
  check(k >= 1 && k <= train_y.size(), "knn: K outside [1, train size]");

  const Tensor dist = detail::metric_distances(test_emb, train_emb, metric);
  int n_classes = 0;
  for (int label : train_y) n_classes = std::max(n_classes, label + 1);
  for (int label : test_y) n_classes = std::max(n_classes, label + 1);

  std::size_t correct = 0;
  std::vector<std::size_t> order(train_y.size());
  for (std::size_t q = 0; q < test_emb.rows(); ++q) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const double* drow = dist.data() + q * train_y.size();
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (drow[a] != drow[b]) return drow[a] < drow[b];
                        if (train_y[a] != train_y[b]) return train_y[a] < train_y[b];
                        return a < b;
                      });
    std::vector<std::size_t> votes(n_classes, 0);
    std::vector<double> summed(n_classes, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const int label = train_y[order[i]];
      ++votes[label];
      summed[label] += drow[order[i]];
    }
    int best = 0;
    for (int c = 1; c < n_classes; ++c) {
      if (votes[c] > votes[best] ||
          (votes[c] == votes[best] && summed[c] < summed[best])) {
        best = c;
      }
    }
    if (best == test_y[q]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_emb.rows());
}

// CSV rows of the form: label, feature_1, ..., feature_d.
inline LabeledSet load_csv(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ls, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail("load_csv: bad number '" + cell + "' in " + path);
      }
    }
    check(values.size() >= 2, "load_csv: row needs a label and at least one feature");
    if (width == 0) width = values.size() - 1;
    check(values.size() - 1 == width, "load_csv: inconsistent row width");
    labels.push_back(static_cast<int>(values[0]));
    values.erase(values.begin());
    rows.push_back(std::move(values));
  }
  check(!rows.empty(), "load_csv: no data rows in " + path);
  LabeledSet set;
  set.x = Tensor({rows.size(), width});
  set.y = std::move(labels);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), set.x.data() + i * width);
  return set;
}

}  // namespace twassl
