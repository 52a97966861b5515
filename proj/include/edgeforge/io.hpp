#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edgeforge/graph.hpp"

#include "json.hpp"

namespace edgeforge {

/// Missing input file; the CLI maps this to exit code 2.
struct MissingInputError : std::runtime_error {
  explicit MissingInputError(const std::string& path)
      : std::runtime_error("missing input file: " + path), path(path) {}
  std::string path;
};

/// Writes via a temp file in the same directory, then renames.
void atomic_write(const std::string& path, const std::string& content);

Matrix read_tsv_matrix(const std::string& path);
void write_tsv_matrix(const std::string& path, const Matrix& m);

/// MatrixMarket coordinate or array format, real general; returns dense.
Matrix read_matrix_market(const std::string& path);

/// Dispatches on extension: .mtx via MatrixMarket, anything else as TSV.
Matrix read_feature_matrix(const std::string& path);

std::vector<int> read_int_column(const std::string& path);
void write_int_column(const std::string& path, const std::vector<int>& v);

std::vector<EdgeTriple> read_edge_tsv(const std::string& path);
void write_edge_tsv(const std::string& path, const Graph& g);

/// Graph directory layout: edges.tsv, features.tsv, masks.json (node count,
/// masks and metadata), plus optional batches.tsv / communities.tsv /
/// classes.tsv label columns. Loaders re-validate all invariants.
void save_graph(const std::string& dir, const Graph& g);
Graph load_graph(const std::string& dir);

void save_edge_table(const std::string& path, const EdgeFeatureTable& t);
EdgeFeatureTable load_edge_table(const std::string& path, const Graph& g);

/// Every experiment knob, defaults matching the reference hyperparameters.
/// Unknown keys in a config file are rejected.
struct RunConfig {
  // backbone hyperparameters
  std::string backbone = "gcn";  // "gcn" | "gat"
  int layers = 2;
  int gat_hidden = 8;
  int gat_heads = 8;
  int gcn_hidden = 256;
  std::string optimizer = "adagrad";
  double weight_decay = 0.0005;
  int batch_size = 256;
  double gat_dropout = 0.5;
  double gcn_dropout = 0.4;
  double leaky_relu_slope = 0.2;
  int epochs = 1000;
  int patience = 100;
  double lr = 0.01;

  // graph construction
  int k = 3;
  int d_pca = 50;
  std::string knn_mode = "bbknn";  // "bbknn" | "knn"
  bool symmetrize = false;
  int partition_count = 0;  // 0: max(1, n/64)

  // set transformer
  int st_heads = 2;
  int st_output_dim = 8;

  // edge feature toggles (ablations)
  bool use_edge_features = true;
  bool use_aux_community = true;
  bool use_aux_batch = true;
  bool use_curvature = true;
  bool use_node2vec = true;

  // auxiliary tasks
  double aux_holdout = 0.1;

  // node2vec
  int n2v_dim = 16;
  double n2v_p = 1.0;
  double n2v_q = 1.0;
  int n2v_walk_len = 20;
  int n2v_walks = 10;
  int n2v_window = 5;
  int n2v_negatives = 5;

  double louvain_resolution = 1.0;

  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& cfg);

/// Metrics of one training run.
struct SeedRunMetrics {
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

/// Multi-seed evaluation record with confidence interval and optional
/// Welch comparison against a baseline report.
struct RunReport {
  std::vector<SeedRunMetrics> runs;
  double mean_accuracy = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool has_welch = false;
  double welch_t = 0.0;
  double welch_dof = 0.0;
  double welch_p = 1.0;
  double wall_clock_sec = 0.0;

  std::vector<double> accuracies() const;
};

nlohmann::json run_report_to_json(const RunReport& r);
RunReport run_report_from_json(const nlohmann::json& j);
void save_run_report(const std::string& path, const RunReport& r);
RunReport load_run_report(const std::string& path);
/// TSV loss curves (epoch, train, val) for external plotting.
void save_loss_curves(const std::string& path, const SeedRunMetrics& m);

/// Worker cap from EDGEFORGE_THREADS (>= 1); `fallback` when unset.
int env_thread_cap(int fallback);

}  // namespace edgeforge
