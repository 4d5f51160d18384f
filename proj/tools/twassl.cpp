// twassl: verification sweeps, SSL training runs, KNN evaluation and
// ablation grids for tree-Wasserstein representation learning.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "twassl/config.hpp"
#include "twassl/data.hpp"
#include "twassl/train.hpp"
#include "twassl/tree.hpp"
#include "twassl/verify.hpp"

namespace fs = std::filesystem;
using namespace twassl;

namespace {

// Runs tasks over a small worker pool. Each task owns its output slot, so
// scheduling order cannot change the results.
void run_pool(std::vector<std::function<void()>>& tasks, std::size_t jobs) {
  if (jobs <= 1 || tasks.size() <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      tasks[i]();
    }
  };
  std::vector<std::thread> threads;
  const std::size_t n = std::min(jobs, tasks.size());
  threads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

void ensure_output_dir(const std::string& dir, bool force) {
  const fs::path p(dir);
  if (fs::exists(p)) {
    check(fs::is_directory(p), "output path exists and is not a directory: " + dir);
    if (!fs::is_empty(p))
      check(force, "output directory " + dir + " is not empty (use --force to reuse it)");
  } else {
    fs::create_directories(p);
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

int cmd_verify(const std::string& suite, std::size_t trials, std::uint64_t seed,
               const std::string& out_dir, const std::string& fixture_path) {
  std::vector<TreeTopology> fixtures;
  if (!fixture_path.empty()) {
    std::ifstream in(fixture_path);
    check(in.good(), "cannot open topology fixture " + fixture_path);
    nlohmann::json j;
    in >> j;
    fixtures.push_back(topology_from_json(j));
  }

  std::vector<std::string> suites;
  if (suite == "all")
    suites = all_verify_suites();
  else
    suites.push_back(suite);

  bool all_pass = true;
  for (const std::string& name : suites) {
    const SweepReport report = run_verify_suite(name, trials, seed, fixtures);
    if (!out_dir.empty()) {
      const fs::path csv = fs::path(out_dir) / ("verify_" + name + ".csv");
      write_file_atomic(csv.string(), report.csv());
    }
    std::printf("%s\n", report.summary().c_str());
    all_pass = all_pass && report.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_train(const std::string& config_path, std::int64_t seed_override,
              const std::string& out_override, bool force, std::size_t jobs) {
  RunConfig cfg = load_config(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
  ensure_output_dir(cfg.output_dir, force);
  write_file_atomic((fs::path(cfg.output_dir) / "config.toml").string(), config_to_toml(cfg));

  std::vector<TrainOutput> outputs(cfg.seeds.size());
  std::vector<std::function<void()>> tasks;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    tasks.push_back([&, i]() { outputs[i] = train_run(cfg, cfg.seeds[i]); });
  run_pool(tasks, jobs);

  std::vector<double> accuracies;
  std::ostringstream agg;
  agg.precision(10);
  agg << "seed,final_accuracy,collapsed,epochs_run,wall_clock_sec,abort_reason\n";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const RunRecord& r = outputs[i].record;
    const std::string tag = "seed" + std::to_string(cfg.seeds[i]);
    write_file_atomic((fs::path(cfg.output_dir) / ("run_" + tag + ".jsonl")).string(),
                      run_record_jsonl(r));
    save_checkpoint((fs::path(cfg.output_dir) / ("checkpoint_" + tag + ".json")).string(), cfg,
                    cfg.seeds[i], r.epoch_loss.size(), outputs[i].params);
    agg << cfg.seeds[i] << "," << r.final_accuracy << "," << (r.collapsed ? 1 : 0) << ","
        << r.epoch_loss.size() << "," << r.wall_clock_sec << "," << r.abort_reason << "\n";
    std::string flags;
    if (r.collapsed) flags += " [collapsed]";
    if (!r.abort_reason.empty()) flags += " [aborted: " + r.abort_reason + "]";
    std::printf("seed %llu: accuracy=%.4f%s\n", static_cast<unsigned long long>(cfg.seeds[i]),
                r.final_accuracy, flags.c_str());
    if (std::isfinite(r.final_accuracy)) accuracies.push_back(r.final_accuracy);
  }
  agg << "aggregate," << mean_of(accuracies) << ",,,," << "\n";
  agg << "aggregate_std," << std_of(accuracies) << ",,,," << "\n";
  write_file_atomic((fs::path(cfg.output_dir) / "aggregate.csv").string(), agg.str());
  std::printf("mean accuracy over %zu seed(s): %.4f +- %.4f\n", accuracies.size(),
              mean_of(accuracies), std_of(accuracies));
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_csv,
             const std::string& train_csv, const std::string& metric_override,
             std::int64_t k_override) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  RunConfig cfg = ck.config;
  if (!metric_override.empty()) cfg.eval.metric = metric_override;
  if (k_override >= 1) cfg.eval.knn_k = static_cast<std::size_t>(k_override);

  LabeledSet train_set, test_set;
  if (!data_csv.empty()) {
    test_set = load_csv(data_csv);
    train_set = train_csv.empty() ? test_set : load_csv(train_csv);
    check(test_set.x.cols() == cfg.encoder.d_in(),
          "checkpoint/config mismatch: data width " + std::to_string(test_set.x.cols()) +
              " vs encoder input " + std::to_string(cfg.encoder.d_in()));
  } else {
    auto pair = make_synthetic(cfg.data, ck.seed);
    train_set = std::move(pair.first);
    test_set = std::move(pair.second);
  }

  const TreeTopology topology = cfg.tree.build();
  const Tensor train_emb = eval_embeddings(cfg, ck.params, train_set.x);
  const Tensor test_emb = eval_embeddings(cfg, ck.params, test_set.x);
  const DistanceKind metric = resolve_eval_metric(cfg, topology);
  if (cfg.eval.metric == "cosine" && objective_uses_twd(cfg.loss.objective))
    std::printf("note: cosine metric over simplex embeddings (non-default pairing)\n");
  const double acc =
      knn_classify(train_emb, train_set.y, test_emb, test_set.y,
                   std::min(cfg.eval.knn_k, train_set.size()), metric);
  std::printf("accuracy=%.4f (K=%zu, metric=%s, n_train=%zu, n_test=%zu)\n", acc,
              std::min(cfg.eval.knn_k, train_set.size()), cfg.eval.metric.c_str(),
              train_set.size(), test_set.size());
  return 0;
}

struct AblationCell {
  std::string label;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  bool collapsed = false;
  std::size_t epochs = 0;
  std::string abort_reason;
};

int cmd_ablate(const std::string& config_path, const std::string& axis,
               const std::string& values_csv, const std::string& out_override, bool force,
               std::size_t jobs) {
  RunConfig base = load_config(config_path);
  if (!out_override.empty()) base.output_dir = out_override;
  ensure_output_dir(base.output_dir, force);

  std::vector<std::string> values;
  {
    std::istringstream vs(values_csv);
    std::string cell;
    while (std::getline(vs, cell, ','))
      if (!cell.empty()) values.push_back(cell);
  }
  check(!values.empty(), "ablate: --values is empty");

  std::vector<AblationCell> cells;
  std::vector<std::function<void()>> tasks;

  if (axis == "knn_k") {
    // One training run per seed; every K re-evaluates the same embeddings.
    std::vector<TrainOutput> outputs(base.seeds.size());
    std::vector<std::function<void()>> train_tasks;
    for (std::size_t i = 0; i < base.seeds.size(); ++i)
      train_tasks.push_back([&, i]() { outputs[i] = train_run(base, base.seeds[i]); });
    run_pool(train_tasks, jobs);

    const TreeTopology topology = base.tree.build();
    for (const std::string& v : values) {
      const std::size_t k = static_cast<std::size_t>(std::stoul(v));
      for (std::size_t i = 0; i < base.seeds.size(); ++i) {
        auto pair = make_synthetic(base.data, base.seeds[i]);
        const Tensor train_emb = eval_embeddings(base, outputs[i].params, pair.first.x);
        const Tensor test_emb = eval_embeddings(base, outputs[i].params, pair.second.x);
        const double acc = knn_classify(train_emb, pair.first.y, test_emb, pair.second.y,
                                        std::min(k, pair.first.size()),
                                        resolve_eval_metric(base, topology));
        cells.push_back({v, base.seeds[i], acc, outputs[i].record.collapsed,
                         outputs[i].record.epoch_loss.size(), outputs[i].record.abort_reason});
      }
    }
  } else {
    struct GridJob {
      RunConfig cfg;
      std::uint64_t seed;
      std::string label;
    };
    std::vector<GridJob> grid;
    for (const std::string& v : values) {
      RunConfig cfg = base;
      if (axis == "lambda_jd") {
        cfg.loss.lambda_jd = std::stod(v);
      } else if (axis == "head") {
        // "softmax" runs unregularized; "softmax+jd" keeps the base lambda.
        std::string name = v;
        const std::string suffix = "+jd";
        const bool with_jd = name.size() > suffix.size() &&
                             name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
        if (with_jd) name = name.substr(0, name.size() - suffix.size());
        cfg.head.kind = head_kind_from_name(name);
        cfg.loss.lambda_jd = with_jd ? (base.loss.lambda_jd > 0.0 ? base.loss.lambda_jd : 0.1)
                                     : 0.0;
      } else {
        fail("ablate: unknown axis '" + axis + "' (lambda_jd|knn_k|head)");
      }
      cfg.validate();
      for (std::uint64_t seed : cfg.seeds) grid.push_back({cfg, seed, v});
    }
    cells.resize(grid.size());
    for (std::size_t c = 0; c < grid.size(); ++c) {
      tasks.push_back([&grid, &cells, c]() {
        const TrainOutput out = train_run(grid[c].cfg, grid[c].seed);
        cells[c] = {grid[c].label, grid[c].seed, out.record.final_accuracy, out.record.collapsed,
                    out.record.epoch_loss.size(), out.record.abort_reason};
      });
    }
    run_pool(tasks, jobs);
  }

  std::ostringstream csv;
  csv.precision(10);
  csv << "axis,value,seed,final_accuracy,collapsed,epochs_run,abort_reason\n";
  for (const auto& cell : cells)
    csv << axis << "," << cell.label << "," << cell.seed << "," << cell.accuracy << ","
        << (cell.collapsed ? 1 : 0) << "," << cell.epochs << "," << cell.abort_reason << "\n";
  for (const std::string& v : values) {
    std::vector<double> accs;
    for (const auto& cell : cells)
      if (cell.label == v && std::isfinite(cell.accuracy)) accs.push_back(cell.accuracy);
    csv << axis << "," << v << ",aggregate," << mean_of(accs) << ",,,\n";
    csv << axis << "," << v << ",aggregate_std," << std_of(accs) << ",,,\n";
    std::printf("%s=%s: mean accuracy %.4f +- %.4f over %zu seed(s)\n", axis.c_str(), v.c_str(),
                mean_of(accs), std_of(accs), accs.size());
  }
  const fs::path table = fs::path(base.output_dir) / ("ablation_" + axis + ".csv");
  write_file_atomic(table.string(), csv.str());
  std::printf("wrote %s\n", table.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tree-Wasserstein self-supervised learning toolkit"};
  app.require_subcommand(1);

  // verify
  auto* verify = app.add_subcommand("verify", "run oracle verification sweeps");
  std::string suite = "all";
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  std::string verify_out = "verify_out";
  std::string fixture;
  verify->add_option("--suite", suite,
                     "twd-lp|rtwd-tv|jd-bound|pinsker|sinkhorn|gradcheck|dct-orth|all");
  verify->add_option("--trials", trials, "trials per sweep cell");
  verify->add_option("--seed", seed, "sweep seed");
  verify->add_option("--out", verify_out, "directory for CSV reports");
  verify->add_option("--topology", fixture, "JSON topology fixture to include in the sweeps");

  // train
  auto* train = app.add_subcommand("train", "train one run per configured seed");
  std::string train_config;
  std::string train_out;
  std::int64_t train_seed = -1;
  bool train_force = false;
  std::size_t jobs = 1;
  train->add_option("--config", train_config, "TOML run configuration")->required();
  train->add_option("--seed", train_seed, "override: train this single seed");
  train->add_option("--out", train_out, "override output directory");
  train->add_flag("--force", train_force, "reuse a non-empty output directory");
  train->add_option("--jobs", jobs, "worker threads for independent runs");

  // eval
  auto* eval = app.add_subcommand("eval", "KNN evaluation of a checkpoint");
  std::string ckpt, eval_data, eval_train_data, eval_metric;
  std::int64_t eval_k = -1;
  eval->add_option("--checkpoint", ckpt, "checkpoint manifest JSON")->required();
  eval->add_option("--data", eval_data, "CSV test data (label,features...)");
  eval->add_option("--train-data", eval_train_data, "CSV train reference data");
  eval->add_option("--metric", eval_metric, "twd|tv|cosine (default: from config)");
  eval->add_option("--k", eval_k, "number of neighbors");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "grid of runs along one axis");
  std::string ab_config, ab_axis, ab_values, ab_out;
  bool ab_force = false;
  std::size_t ab_jobs = 1;
  ablate->add_option("--config", ab_config, "TOML run configuration")->required();
  ablate->add_option("--axis", ab_axis, "lambda_jd|knn_k|head")->required();
  ablate->add_option("--values", ab_values, "comma-separated axis values")->required();
  ablate->add_option("--out", ab_out, "override output directory");
  ablate->add_flag("--force", ab_force, "reuse a non-empty output directory");
  ablate->add_option("--jobs", ab_jobs, "worker threads for independent runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) return cmd_verify(suite, trials, seed, verify_out, fixture);
    if (train->parsed()) return cmd_train(train_config, train_seed, train_out, train_force, jobs);
    if (eval->parsed()) return cmd_eval(ckpt, eval_data, eval_train_data, eval_metric, eval_k);
    if (ablate->parsed())
      return cmd_ablate(ab_config, ab_axis, ab_values, ab_out, ab_force, ab_jobs);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
