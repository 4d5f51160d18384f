#pragma once
// The training loop: desk-scale MLP encoder, two-view batches, the
// configured SSL objective, deterministic seeding, per-epoch diagnostics and
// the final KNN evaluation. Also the checkpoint format (JSON manifest plus a
// raw little-endian float64 parameter blob) and run-record JSONL output.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "twassl/config.hpp"
#include "twassl/data.hpp"
#include "twassl/distances.hpp"
#include "twassl/graph.hpp"
#include "twassl/heads.hpp"
#include "twassl/losses.hpp"
#include "twassl/optim.hpp"
#include "twassl/rng.hpp"
#include "twassl/tensor.hpp"

namespace twassl {

// Full provenance of one training/evaluation run.
struct RunRecord {
  std::string config_toml;
  std::uint64_t seed = 0;
  std::vector<double> epoch_loss;              // length = epochs run
  std::vector<CollapseMetrics> epoch_collapse; // aligned with epoch_loss
  double final_accuracy = std::numeric_limits<double>::quiet_NaN();
  double wall_clock_sec = 0.0;
  bool collapsed = false;
  std::string abort_reason;  // empty when the run completed
};

struct TrainOutput {
  RunRecord record;
  ParamSet params;
};

namespace detail {

inline std::size_t predictor_hidden(std::size_t d) { return d >= 4 ? d / 4 : 1; }

inline Tensor fixed_key_tensor(const HeadConfig& head) {
  if (head.kind == HeadKind::ArcFacePE) return pe_key_matrix(head.d_out, head.d_prob).k;
  if (head.kind == HeadKind::ArcFaceDCT) return dct_key_matrix(head.d_out).k;
  fail("fixed_key_tensor: head has no fixed key");
}

}  // namespace detail

// Initializes every learnable tensor for a run: encoder, SimSiam predictor
// when the objective needs one, and the key matrix when it is learned.
inline ParamSet init_params(const RunConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "init");
  ParamSet params;
  init_mlp_params(params, "enc", cfg.encoder.widths, rng);
  if (objective_is_simsiam(cfg.loss.objective)) {
    const std::size_t d = cfg.encoder.d_out();
    init_mlp_params(params, "pred", {d, detail::predictor_hidden(d), d}, rng);
    // Small random output bias: a batch row whose narrow hidden layer lands
    // entirely in the dead-relu region still yields a nonzero predictor
    // output, which the normalizing heads require.
    Tensor& out_bias = params.at("pred.b1");
    for (std::size_t i = 0; i < out_bias.numel(); ++i) out_bias[i] = 0.01 * rng.normal();
  }
  if (cfg.head.kind == HeadKind::ArcFaceLearned)
    params.add("head.key", random_key_matrix(cfg.head.d_out, cfg.head.d_prob, rng).k);
  return params;
}

inline std::size_t encoder_layers(const RunConfig& cfg) { return cfg.encoder.widths.size() - 1; }

// Pure encoder pass (no tape), deterministic given the parameters.
inline Tensor encoder_features(const RunConfig& cfg, const ParamSet& params, const Tensor& x) {
  return mlp_apply(params, "enc", encoder_layers(cfg), x);
}

// Pure head pass over a batch of feature rows.
inline Tensor head_apply_batch(const HeadConfig& head, const Tensor* key, const Tensor& f) {
  switch (head.kind) {
    case HeadKind::Softmax:
      return softmax_rows(f);
    case HeadKind::Sem: {
      const std::size_t rows = f.rows();
      Tensor blocks = reshape(f, {rows * head.sem_blocks, head.sem_block_dim});
      Tensor y = scale(softmax_rows(blocks), 1.0 / static_cast<double>(head.sem_blocks));
      return reshape(y, {rows, head.d_prob});
    }
    default: {
      check(key != nullptr, "head_apply_batch: key required");
      const Tensor fn = l2_normalize_rows(f);
      return softmax_rows(scale(matmul(fn, *key), 1.0 / head.eta));
    }
  }
}

inline Tensor head_key_tensor(const RunConfig& cfg, const ParamSet& params) {
  if (cfg.head.kind == HeadKind::ArcFaceLearned) return params.at("head.key");
  return detail::fixed_key_tensor(cfg.head);
}

// Embeddings used for KNN evaluation: simplex rows for TWD objectives,
// raw encoder features for the cosine baselines.
inline Tensor eval_embeddings(const RunConfig& cfg, const ParamSet& params, const Tensor& x) {
  const Tensor f = encoder_features(cfg, params, x);
  if (!objective_uses_twd(cfg.loss.objective) && cfg.eval.metric != "twd" &&
      cfg.eval.metric != "tv")
    return f;
  if (cfg.head.kind == HeadKind::Softmax || cfg.head.kind == HeadKind::Sem)
    return head_apply_batch(cfg.head, nullptr, f);
  const Tensor key = head_key_tensor(cfg, params);
  return head_apply_batch(cfg.head, &key, f);
}

inline DistanceKind resolve_eval_metric(const RunConfig& cfg, const TreeTopology& topology) {
  if (cfg.eval.metric == "twd") return DistanceKind::twd(topology);
  if (cfg.eval.metric == "tv") return DistanceKind::total_variation();
  if (cfg.eval.metric == "cosine") return DistanceKind::cosine();
  // auto: L1 over the tree for Wasserstein objectives, cosine otherwise.
  if (objective_uses_twd(cfg.loss.objective)) return DistanceKind::twd(topology);
  return DistanceKind::cosine();
}

// Builds the per-step loss graph and returns the scalar loss node.
inline NodeId build_loss_graph(Graph& g, const RunConfig& cfg, const TreeTopology& topology,
                               const BoundParams& bound, const Tensor& fixed_key,
                               const Tensor& view1, const Tensor& view2) {
  NodeId x1 = g.constant(view1);
  NodeId x2 = g.constant(view2);
  const std::size_t enc_layers = cfg.encoder.widths.size() - 1;
  NodeId z1 = mlp_node(g, bound, "enc", enc_layers, x1);
  NodeId z2 = mlp_node(g, bound, "enc", enc_layers, x2);

  NodeId key{};
  if (head_uses_key(cfg.head.kind)) {
    key = cfg.head.kind == HeadKind::ArcFaceLearned ? bound.at("head.key")
                                                    : g.constant(fixed_key);
  }

  switch (cfg.loss.objective) {
    case Objective::InfoNceTwd: {
      NodeId a1 = head_node(g, cfg.head, z1, key);
      NodeId a2 = head_node(g, cfg.head, z2, key);
      return infonce_twd_loss(g, a1, a2, topology, cfg.loss.tau, cfg.loss.lambda_jd,
                              cfg.loss.jd_mode);
    }
    case Objective::InfoNceCosine:
      return infonce_cosine_loss(g, z1, z2, cfg.loss.tau);
    case Objective::SimSiamTwd: {
      NodeId p1 = head_node(g, cfg.head, mlp_node(g, bound, "pred", 2, z1), key);
      NodeId p2 = head_node(g, cfg.head, mlp_node(g, bound, "pred", 2, z2), key);
      NodeId t1 = g.stop_grad(head_node(g, cfg.head, z1, key));
      NodeId t2 = g.stop_grad(head_node(g, cfg.head, z2, key));
      return simsiam_twd_loss(g, p1, p2, t1, t2, topology, cfg.loss.lambda_jd,
                              cfg.loss.jd_mode);
    }
    case Objective::SimSiamCosine: {
      NodeId p1 = mlp_node(g, bound, "pred", 2, z1);
      NodeId p2 = mlp_node(g, bound, "pred", 2, z2);
      NodeId t1 = g.stop_grad(z1);
      NodeId t2 = g.stop_grad(z2);
      return simsiam_cosine_loss(g, p1, p2, t1, t2);
    }
  }
  fail("build_loss_graph: unknown objective");
}

// One full training run. Reproducible given (config, seed): the loss series
// is bitwise identical across repeats. Divergence aborts with a diagnostic
// in the record instead of emitting NaN silently.
inline TrainOutput train_run(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();

  const TreeTopology topology = cfg.tree.build();
  LabeledSet train_set, test_set;
  if (!cfg.csv_train.empty()) {
    train_set = load_csv(cfg.csv_train);
    test_set = cfg.csv_test.empty() ? train_set : load_csv(cfg.csv_test);
  } else {
    auto pair = make_synthetic(cfg.data, seed);
    train_set = std::move(pair.first);
    test_set = std::move(pair.second);
  }
  check(train_set.x.cols() == cfg.encoder.d_in(),
        "train: dataset width does not match encoder input");

  TrainOutput out;
  out.record.config_toml = config_to_toml(cfg);
  out.record.seed = seed;
  out.params = init_params(cfg, seed);

  Tensor fixed_key;
  if (cfg.head.kind == HeadKind::ArcFacePE || cfg.head.kind == HeadKind::ArcFaceDCT)
    fixed_key = detail::fixed_key_tensor(cfg.head);

  Optimizer optimizer(cfg.optimizer, {"head.key"});

  // Strided probe subset: spans all classes even though the synthetic set is
  // laid out class by class.
  const std::size_t probe_rows = std::min<std::size_t>(256, train_set.size());
  const std::size_t probe_stride = train_set.size() / probe_rows;
  auto probe_metrics = [&]() -> CollapseMetrics {
    Tensor probe({probe_rows, train_set.x.cols()});
    for (std::size_t i = 0; i < probe_rows; ++i)
      for (std::size_t c = 0; c < train_set.x.cols(); ++c)
        probe.at(i, c) = train_set.x.at(i * probe_stride, c);
    if (objective_uses_twd(cfg.loss.objective)) {
      const Tensor rows = eval_embeddings(cfg, out.params, probe);
      return collapse_metrics(rows, topology);
    }
    // Cosine objectives: report mean pairwise (1 - cos) in the distance slot.
    const Tensor f = l2_normalize_rows(encoder_features(cfg, out.params, probe));
    CollapseMetrics m;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < f.rows(); ++i)
      for (std::size_t j = i + 1; j < f.rows(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < f.cols(); ++c) s += f.at(i, c) * f.at(j, c);
        total += 1.0 - s;
        ++pairs;
      }
    m.mean_pairwise_twd = total / static_cast<double>(pairs);
    return m;
  };

  // The recorded per-epoch loss is an end-of-epoch evaluation over a fixed
  // probe batch sequence (canonical order, its own augmentation stream), so
  // it is a pure function of the parameters: with lr = 0 the series is
  // exactly constant. Training itself consumes continuously fresh
  // augmentations and shuffles.
  auto probe_loss = [&]() {
    Rng rng_probe = Rng::substream(seed, "probe-loss");
    const std::size_t probe_batches =
        std::max<std::size_t>(1, std::min<std::size_t>(4, train_set.size() /
                                                              cfg.train.batch_size));
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t b = 0; b < probe_batches; ++b) {
      const std::size_t begin = b * cfg.train.batch_size;
      const std::size_t count = std::min(cfg.train.batch_size, train_set.size() - begin);
      if (count < 2) break;
      std::vector<std::size_t> batch(count);
      for (std::size_t i = 0; i < count; ++i) batch[i] = begin + i;
      auto [v1, v2] = two_view_batch(train_set.x, batch, cfg.data.augment, rng_probe);
      Graph g;
      BoundParams bound = bind_params(g, out.params);
      NodeId loss = build_loss_graph(g, cfg, topology, bound, fixed_key, v1, v2);
      total += g.forward(loss).item();
      ++used;
    }
    return total / static_cast<double>(used);
  };

  Rng rng_shuffle = Rng::substream(seed, "shuffle");
  Rng rng_augment = Rng::substream(seed, "augment");
  std::vector<std::size_t> order(train_set.size());

  std::size_t collapse_streak = 0;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_shuffle.shuffle(order);
    bool aborted = false;
    for (std::size_t begin = 0; begin + 2 <= order.size(); begin += cfg.train.batch_size) {
      const std::size_t count = std::min(cfg.train.batch_size, order.size() - begin);
      if (count < 2) break;
      const std::vector<std::size_t> batch(order.begin() + begin,
                                           order.begin() + begin + count);
      auto [v1, v2] = two_view_batch(train_set.x, batch, cfg.data.augment, rng_augment);
      try {
        Graph g;
        BoundParams bound = bind_params(g, out.params);
        NodeId loss = build_loss_graph(g, cfg, topology, bound, fixed_key, v1, v2);
        g.forward(loss);
        g.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(out.params.items.size());
        for (const auto& [name, id] : bound.items) grads.push_back(g.adjoint(id));
        optimizer.step(out.params, grads);
      } catch (const Error& e) {
        out.record.abort_reason = e.what();
        aborted = true;
        break;
      }
    }
    try {
      out.record.epoch_loss.push_back(probe_loss());
      out.record.epoch_collapse.push_back(probe_metrics());
    } catch (const Error& e) {
      if (out.record.abort_reason.empty())
        out.record.abort_reason = std::string("epoch diagnostics failed: ") + e.what();
      break;
    }
    if (aborted) break;

    if (objective_uses_twd(cfg.loss.objective) &&
        out.record.epoch_collapse.back().mean_pairwise_twd < cfg.train.collapse_threshold) {
      if (++collapse_streak >= cfg.train.collapse_patience) {
        out.record.collapsed = true;
        if (cfg.train.abort_on_collapse) break;
      }
    } else {
      collapse_streak = 0;
    }
  }

  try {
    const Tensor train_emb = eval_embeddings(cfg, out.params, train_set.x);
    const Tensor test_emb = eval_embeddings(cfg, out.params, test_set.x);
    const DistanceKind metric = resolve_eval_metric(cfg, topology);
    out.record.final_accuracy = knn_classify(train_emb, train_set.y, test_emb, test_set.y,
                                             std::min(cfg.eval.knn_k, train_set.size()), metric);
  } catch (const Error& e) {
    if (out.record.abort_reason.empty())
      out.record.abort_reason = std::string("evaluation failed: ") + e.what();
  }

  out.record.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---- persistence ------------------------------------------------------------

inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream outf(tmp, std::ios::binary | std::ios::trunc);
    check(outf.good(), "cannot write " + tmp.string());
    outf << content;
  }
  fs::rename(tmp, target);
}

inline nlohmann::json collapse_to_json(const CollapseMetrics& m) {
  return nlohmann::json{{"mean_pairwise_twd", m.mean_pairwise_twd},
                        {"mean_std", m.mean_std},
                        {"entropy", m.entropy}};
}

// One JSON object per line: a meta row, one row per epoch, a final row.
inline std::string run_record_jsonl(const RunRecord& r) {
  std::string outstr;
  nlohmann::json meta{{"row", "meta"}, {"seed", r.seed}, {"config_toml", r.config_toml}};
  outstr += meta.dump() + "\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    nlohmann::json row{{"row", "epoch"}, {"epoch", e + 1}, {"loss", r.epoch_loss[e]}};
    if (e < r.epoch_collapse.size()) row["collapse"] = collapse_to_json(r.epoch_collapse[e]);
    outstr += row.dump() + "\n";
  }
  nlohmann::json fin{{"row", "final"},
                     {"epochs_run", r.epoch_loss.size()},
                     {"final_accuracy", r.final_accuracy},
                     {"wall_clock_sec", r.wall_clock_sec},
                     {"collapsed", r.collapsed},
                     {"abort_reason", r.abort_reason}};
  outstr += fin.dump() + "\n";
  return outstr;
}

struct Checkpoint {
  RunConfig config;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  ParamSet params;
};

// JSON manifest next to a raw little-endian float64 blob.
inline void save_checkpoint(const std::string& manifest_path, const RunConfig& cfg,
                            std::uint64_t seed, std::size_t step, const ParamSet& params) {
  namespace fs = std::filesystem;
  const fs::path mpath(manifest_path);
  const std::string blob_name = mpath.stem().string() + ".params.bin";

  nlohmann::json manifest;
  manifest["format"] = "twassl-checkpoint-v1";
  manifest["config_toml"] = config_to_toml(cfg);
  manifest["seed"] = seed;
  manifest["step"] = step;
  manifest["blob"] = blob_name;
  nlohmann::json plist = nlohmann::json::array();
  std::size_t offset = 0;
  std::string blob;
  for (const auto& [name, t] : params.items) {
    nlohmann::json entry{{"name", name}, {"shape", t.shape()}, {"offset", offset}};
    plist.push_back(entry);
    blob.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
    offset += t.numel();
  }
  manifest["params"] = plist;

  const fs::path blob_path = mpath.has_parent_path() ? mpath.parent_path() / blob_name
                                                     : fs::path(blob_name);
  write_file_atomic(blob_path.string(), blob);
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  check(in.good(), "cannot open checkpoint manifest " + manifest_path);
  nlohmann::json manifest;
  in >> manifest;
  check(manifest.value("format", "") == "twassl-checkpoint-v1",
        "unknown checkpoint format in " + manifest_path);

  Checkpoint ck;
  ck.config = config_from_toml(manifest.at("config_toml").get<std::string>());
  ck.seed = manifest.at("seed").get<std::uint64_t>();
  ck.step = manifest.at("step").get<std::size_t>();

  const fs::path mpath(manifest_path);
  const fs::path blob_path = mpath.has_parent_path()
                                 ? mpath.parent_path() / manifest.at("blob").get<std::string>()
                                 : fs::path(manifest.at("blob").get<std::string>());
  std::ifstream blob(blob_path, std::ios::binary);
  check(blob.good(), "cannot open checkpoint blob " + blob_path.string());
  std::string bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

  for (const auto& entry : manifest.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = Tensor::numel_of(shape);
    check((offset + count) * sizeof(double) <= bytes.size(),
          "checkpoint blob too short for parameter " + name);
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data() + offset * sizeof(double), count * sizeof(double));
    Tensor t(shape, std::move(values));
    check(t.all_finite(), "checkpoint parameter " + name + " contains non-finite values");
    ck.params.add(name, std::move(t));
  }
  return ck;
}

}  // namespace twassl
