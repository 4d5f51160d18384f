#pragma once
// Run configuration: a TOML file with nested sections (tree, head, loss,
// optimizer, encoder, data, train, eval, run). The parser covers the subset
// the tool emits: [section] tables, bare keys, strings, numbers, booleans
// and flat arrays, with # comments. Snapshots round-trip through
// to_toml_string()/parse so run records stay reconstructible.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "twassl/common.hpp"
#include "twassl/data.hpp"
#include "twassl/heads.hpp"
#include "twassl/losses.hpp"
#include "twassl/optim.hpp"
#include "twassl/tree.hpp"

namespace twassl {

namespace toml {

struct Value {
  enum class Kind { String, Number, Bool, Array } kind = Kind::Number;
  std::string str;
  double num = 0.0;
  bool boolean = false;
  std::vector<Value> array;

  static Value string(std::string s) {
    Value v;
    v.kind = Kind::String;
    v.str = std::move(s);
    return v;
  }
  static Value number(double d) {
    Value v;
    v.kind = Kind::Number;
    v.num = d;
    return v;
  }
  static Value bool_(bool b) {
    Value v;
    v.kind = Kind::Bool;
    v.boolean = b;
    return v;
  }
};

using Table = std::map<std::string, Value>;

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline Value parse_scalar(const std::string& text, std::size_t line_no) {
  const std::string s = trim(text);
  check(!s.empty(), "config line " + std::to_string(line_no) + ": empty value");
  if (s.front() == '"') {
    check(s.size() >= 2 && s.back() == '"',
          "config line " + std::to_string(line_no) + ": unterminated string");
    return Value::string(s.substr(1, s.size() - 2));
  }
  if (s == "true") return Value::bool_(true);
  if (s == "false") return Value::bool_(false);
  try {
    std::size_t used = 0;
    const double d = std::stod(s, &used);
    check(used == s.size(), "trailing characters");
    return Value::number(d);
  } catch (const std::exception&) {
    fail("config line " + std::to_string(line_no) + ": cannot parse value '" + s + "'");
  }
}

inline Value parse_value(const std::string& text, std::size_t line_no) {
  const std::string s = trim(text);
  if (!s.empty() && s.front() == '[') {
    check(s.back() == ']', "config line " + std::to_string(line_no) + ": unterminated array");
    Value v;
    v.kind = Value::Kind::Array;
    const std::string inner = s.substr(1, s.size() - 2);
    std::string cell;
    bool in_string = false;
    for (char c : inner) {
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        if (!trim(cell).empty()) v.array.push_back(parse_scalar(cell, line_no));
        cell.clear();
      } else {
        cell += c;
      }
    }
    if (!trim(cell).empty()) v.array.push_back(parse_scalar(cell, line_no));
    return v;
  }
  return parse_scalar(s, line_no);
}

// Flat table keyed by "section.key".
inline Table parse(const std::string& text) {
  Table table;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      check(line.back() == ']', "config line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      check(!section.empty(), "config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    check(eq != std::string::npos,
          "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    check(!key.empty(), "config line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    check(table.find(full) == table.end(),
          "config line " + std::to_string(line_no) + ": duplicate key '" + full + "'");
    table[full] = parse_value(line.substr(eq + 1), line_no);
  }
  return table;
}

inline std::string format_number(double d) {
  if (d == static_cast<double>(static_cast<long long>(d)) && std::abs(d) < 1e15) {
    return std::to_string(static_cast<long long>(d));
  }
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace toml

struct TrainControl {
  std::size_t epochs = 80;
  std::size_t batch_size = 64;
  bool abort_on_collapse = false;
  double collapse_threshold = 1e-4;
  std::size_t collapse_patience = 5;

  void validate() const {
    check(batch_size >= 2, "train: batch size must be at least 2");
    check(collapse_threshold >= 0.0, "train: negative collapse threshold");
    check(collapse_patience >= 1, "train: collapse patience must be positive");
  }
};

struct TreeConfig {
  std::string kind = "tv";  // tv | cluster | chain
  std::size_t n_leaves = 32;
  double edge_weight = 0.5;          // tv
  std::size_t n_clusters = 4;        // cluster
  std::size_t leaves_per_cluster = 8;
  double internal_weight = 0.5;
  double leaf_weight = 0.5;
  double chain_gap = 1.0;  // chain (uniform gaps)

  TreeTopology build() const {
    if (kind == "tv") return build_tv_tree(n_leaves, edge_weight);
    if (kind == "cluster")
      return build_cluster_tree(n_clusters, leaves_per_cluster, internal_weight, leaf_weight);
    if (kind == "chain") return build_chain_tree_uniform(n_leaves, chain_gap);
    fail("tree: unknown kind '" + kind + "' (tv|cluster|chain)");
  }

  std::size_t leaves() const {
    return kind == "cluster" ? n_clusters * leaves_per_cluster : n_leaves;
  }
};

struct EvalConfig {
  std::size_t knn_k = 50;
  std::string metric = "auto";  // auto | twd | tv | cosine
};

struct RunConfig {
  TreeConfig tree;
  HeadConfig head;
  LossConfig loss;
  OptimizerConfig optimizer;
  EncoderConfig encoder;
  SyntheticSpec data;
  std::string csv_train;  // optional external data
  std::string csv_test;
  TrainControl train;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string output_dir = "runs/out";

  // Cross-field constraints are checked before any work starts.
  void validate() const {
    head.validate();
    loss.validate();
    optimizer.validate();
    encoder.validate();
    data.validate();
    train.validate();
    check(!seeds.empty(), "run: need at least one seed");
    check(eval.knn_k >= 1, "eval: K must be positive");
    check(eval.metric == "auto" || eval.metric == "twd" || eval.metric == "tv" ||
              eval.metric == "cosine",
          "eval: unknown metric '" + eval.metric + "'");
    if (csv_train.empty())
      check(encoder.d_in() == data.d_in, "encoder input width does not match data d_in");
    check(encoder.d_out() == head.d_out, "encoder output width does not match head d_out");
    if (objective_uses_twd(loss.objective))
      check(head.d_prob == tree.leaves(),
            "head d_prob (" + std::to_string(head.d_prob) +
                ") must equal the tree leaf count (" + std::to_string(tree.leaves()) + ")");
    (void)tree.build();  // constructor validates its own parameters
  }
};

inline RunConfig config_from_toml(const std::string& text) {
  const toml::Table t = toml::parse(text);

  auto get_num = [&](const std::string& key, double fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    check(it->second.kind == toml::Value::Kind::Number, "config: " + key + " must be a number");
    return it->second.num;
  };
  auto get_count = [&](const std::string& key, std::size_t fallback) {
    const double d = get_num(key, static_cast<double>(fallback));
    check(d >= 0.0 && d == static_cast<double>(static_cast<std::size_t>(d)),
          "config: " + key + " must be a nonnegative integer");
    return static_cast<std::size_t>(d);
  };
  auto get_str = [&](const std::string& key, const std::string& fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    check(it->second.kind == toml::Value::Kind::String, "config: " + key + " must be a string");
    return it->second.str;
  };
  auto get_bool = [&](const std::string& key, bool fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    check(it->second.kind == toml::Value::Kind::Bool, "config: " + key + " must be a boolean");
    return it->second.boolean;
  };

  RunConfig cfg;
  cfg.tree.kind = get_str("tree.kind", cfg.tree.kind);
  cfg.tree.n_leaves = get_count("tree.n_leaves", cfg.tree.n_leaves);
  cfg.tree.edge_weight = get_num("tree.edge_weight", cfg.tree.edge_weight);
  cfg.tree.n_clusters = get_count("tree.n_clusters", cfg.tree.n_clusters);
  cfg.tree.leaves_per_cluster = get_count("tree.leaves_per_cluster", cfg.tree.leaves_per_cluster);
  cfg.tree.internal_weight = get_num("tree.internal_weight", cfg.tree.internal_weight);
  cfg.tree.leaf_weight = get_num("tree.leaf_weight", cfg.tree.leaf_weight);
  cfg.tree.chain_gap = get_num("tree.chain_gap", cfg.tree.chain_gap);

  cfg.head.kind = head_kind_from_name(get_str("head.kind", head_kind_name(cfg.head.kind)));
  // head.key selects the ArcFace key matrix when head.kind = "af":
  // learned | pe | dct (equivalent to kind = af | af_pe | af_dct).
  const std::string key_choice = get_str("head.key", "");
  if (!key_choice.empty()) {
    check(head_uses_key(cfg.head.kind), "config: head.key requires an ArcFace head");
    if (key_choice == "learned") cfg.head.kind = HeadKind::ArcFaceLearned;
    else if (key_choice == "pe") cfg.head.kind = HeadKind::ArcFacePE;
    else if (key_choice == "dct") cfg.head.kind = HeadKind::ArcFaceDCT;
    else fail("config: head.key must be learned|pe|dct");
  }
  cfg.head.d_out = get_count("head.d_out", cfg.head.d_out);
  cfg.head.d_prob = get_count("head.d_prob", cfg.head.d_out);
  cfg.head.sem_blocks = get_count("head.L", cfg.head.sem_blocks);
  cfg.head.sem_block_dim = get_count("head.V", cfg.head.sem_block_dim);
  cfg.head.eta = get_num("head.eta", cfg.head.eta);

  cfg.loss.objective =
      objective_from_name(get_str("loss.objective", objective_name(cfg.loss.objective)));
  cfg.loss.tau = get_num("loss.tau", cfg.loss.tau);
  cfg.loss.lambda_jd = get_num("loss.lambda_jd", cfg.loss.lambda_jd);
  const std::string jd = get_str("loss.jd_mode", "auto");
  if (jd == "auto") cfg.loss.jd_mode = JdMode::Auto;
  else if (jd == "tree") cfg.loss.jd_mode = JdMode::TreeEmbedded;
  else if (jd == "leaf") cfg.loss.jd_mode = JdMode::LeafSimplex;
  else fail("config: loss.jd_mode must be auto|tree|leaf");

  const std::string opt = get_str("optimizer.kind", "adam");
  if (opt == "adam") cfg.optimizer.kind = OptKind::Adam;
  else if (opt == "sgd") cfg.optimizer.kind = OptKind::Sgd;
  else fail("config: optimizer.kind must be adam|sgd");
  cfg.optimizer.lr = get_num("optimizer.lr", cfg.optimizer.lr);
  cfg.optimizer.momentum = get_num("optimizer.momentum", cfg.optimizer.momentum);
  cfg.optimizer.beta1 = get_num("optimizer.beta1", cfg.optimizer.beta1);
  cfg.optimizer.beta2 = get_num("optimizer.beta2", cfg.optimizer.beta2);
  cfg.optimizer.eps = get_num("optimizer.eps", cfg.optimizer.eps);
  cfg.optimizer.weight_decay = get_num("optimizer.weight_decay", cfg.optimizer.weight_decay);

  if (auto it = t.find("encoder.widths"); it != t.end()) {
    check(it->second.kind == toml::Value::Kind::Array, "config: encoder.widths must be an array");
    cfg.encoder.widths.clear();
    for (const auto& v : it->second.array) {
      check(v.kind == toml::Value::Kind::Number && v.num >= 1.0,
            "config: encoder.widths entries must be positive numbers");
      cfg.encoder.widths.push_back(static_cast<std::size_t>(v.num));
    }
  } else {
    cfg.encoder.widths = {32, 128, 128, 32};
  }

  cfg.data.n_classes = get_count("data.n_classes", cfg.data.n_classes);
  cfg.data.d_in = get_count("data.d_in", cfg.data.d_in);
  cfg.data.train_per_class = get_count("data.train_per_class", cfg.data.train_per_class);
  cfg.data.test_per_class = get_count("data.test_per_class", cfg.data.test_per_class);
  cfg.data.center_scale = get_num("data.center_scale", cfg.data.center_scale);
  cfg.data.noise_scale = get_num("data.noise_scale", cfg.data.noise_scale);
  cfg.data.augment.noise_sigma = get_num("data.view_noise_sigma", cfg.data.augment.noise_sigma);
  cfg.data.augment.dropout_prob = get_num("data.view_dropout", cfg.data.augment.dropout_prob);
  cfg.csv_train = get_str("data.csv_train", "");
  cfg.csv_test = get_str("data.csv_test", "");

  cfg.train.epochs = get_count("train.epochs", cfg.train.epochs);
  cfg.train.batch_size = get_count("train.batch_size", cfg.train.batch_size);
  cfg.train.abort_on_collapse = get_bool("train.abort_on_collapse", cfg.train.abort_on_collapse);
  cfg.train.collapse_threshold = get_num("train.collapse_threshold", cfg.train.collapse_threshold);
  cfg.train.collapse_patience = get_count("train.collapse_patience", cfg.train.collapse_patience);

  cfg.eval.knn_k = get_count("eval.knn_k", cfg.eval.knn_k);
  cfg.eval.metric = get_str("eval.metric", cfg.eval.metric);

  if (auto it = t.find("run.seeds"); it != t.end()) {
    check(it->second.kind == toml::Value::Kind::Array, "config: run.seeds must be an array");
    cfg.seeds.clear();
    for (const auto& v : it->second.array) {
      check(v.kind == toml::Value::Kind::Number && v.num >= 0.0,
            "config: run.seeds entries must be nonnegative integers");
      cfg.seeds.push_back(static_cast<std::uint64_t>(v.num));
    }
  }
  cfg.output_dir = get_str("run.output_dir", cfg.output_dir);

  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_toml(buf.str());
}

inline std::string config_to_toml(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[tree]\n";
  os << "kind = \"" << cfg.tree.kind << "\"\n";
  os << "n_leaves = " << cfg.tree.n_leaves << "\n";
  os << "edge_weight = " << toml::format_number(cfg.tree.edge_weight) << "\n";
  os << "n_clusters = " << cfg.tree.n_clusters << "\n";
  os << "leaves_per_cluster = " << cfg.tree.leaves_per_cluster << "\n";
  os << "internal_weight = " << toml::format_number(cfg.tree.internal_weight) << "\n";
  os << "leaf_weight = " << toml::format_number(cfg.tree.leaf_weight) << "\n";
  os << "chain_gap = " << toml::format_number(cfg.tree.chain_gap) << "\n";
  os << "\n[head]\n";
  os << "kind = \"" << head_kind_name(cfg.head.kind) << "\"\n";
  os << "d_out = " << cfg.head.d_out << "\n";
  os << "d_prob = " << cfg.head.d_prob << "\n";
  os << "L = " << cfg.head.sem_blocks << "\n";
  os << "V = " << cfg.head.sem_block_dim << "\n";
  os << "eta = " << toml::format_number(cfg.head.eta) << "\n";
  os << "\n[loss]\n";
  os << "objective = \"" << objective_name(cfg.loss.objective) << "\"\n";
  os << "tau = " << toml::format_number(cfg.loss.tau) << "\n";
  os << "lambda_jd = " << toml::format_number(cfg.loss.lambda_jd) << "\n";
  os << "jd_mode = \""
     << (cfg.loss.jd_mode == JdMode::Auto
             ? "auto"
             : (cfg.loss.jd_mode == JdMode::TreeEmbedded ? "tree" : "leaf"))
     << "\"\n";
  os << "\n[optimizer]\n";
  os << "kind = \"" << (cfg.optimizer.kind == OptKind::Adam ? "adam" : "sgd") << "\"\n";
  os << "lr = " << toml::format_number(cfg.optimizer.lr) << "\n";
  os << "momentum = " << toml::format_number(cfg.optimizer.momentum) << "\n";
  os << "beta1 = " << toml::format_number(cfg.optimizer.beta1) << "\n";
  os << "beta2 = " << toml::format_number(cfg.optimizer.beta2) << "\n";
  os << "eps = " << toml::format_number(cfg.optimizer.eps) << "\n";
  os << "weight_decay = " << toml::format_number(cfg.optimizer.weight_decay) << "\n";
  os << "\n[encoder]\n";
  os << "widths = [";
  for (std::size_t i = 0; i < cfg.encoder.widths.size(); ++i)
    os << (i ? ", " : "") << cfg.encoder.widths[i];
  os << "]\n";
  os << "\n[data]\n";
  os << "n_classes = " << cfg.data.n_classes << "\n";
  os << "d_in = " << cfg.data.d_in << "\n";
  os << "train_per_class = " << cfg.data.train_per_class << "\n";
  os << "test_per_class = " << cfg.data.test_per_class << "\n";
  os << "center_scale = " << toml::format_number(cfg.data.center_scale) << "\n";
  os << "noise_scale = " << toml::format_number(cfg.data.noise_scale) << "\n";
  os << "view_noise_sigma = " << toml::format_number(cfg.data.augment.noise_sigma) << "\n";
  os << "view_dropout = " << toml::format_number(cfg.data.augment.dropout_prob) << "\n";
  if (!cfg.csv_train.empty()) os << "csv_train = \"" << cfg.csv_train << "\"\n";
  if (!cfg.csv_test.empty()) os << "csv_test = \"" << cfg.csv_test << "\"\n";
  os << "\n[train]\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "abort_on_collapse = " << (cfg.train.abort_on_collapse ? "true" : "false") << "\n";
  os << "collapse_threshold = " << toml::format_number(cfg.train.collapse_threshold) << "\n";
  os << "collapse_patience = " << cfg.train.collapse_patience << "\n";
  os << "\n[eval]\n";
  os << "knn_k = " << cfg.eval.knn_k << "\n";
  os << "metric = \"" << cfg.eval.metric << "\"\n";
  os << "\n[run]\n";
  os << "seeds = [";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? ", " : "") << cfg.seeds[i];
  os << "]\n";
  os << "output_dir = \"" << cfg.output_dir << "\"\n";
  return os.str();
}

}  // namespace twassl
