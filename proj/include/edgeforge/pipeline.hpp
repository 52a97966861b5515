#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "edgeforge/curvature.hpp"
#include "edgeforge/graph.hpp"
#include "edgeforge/io.hpp"
#include "edgeforge/layers.hpp"
#include "edgeforge/optim.hpp"
#include "edgeforge/set_transformer.hpp"

namespace edgeforge {

/// Self-supervised auxiliary task: a 2-layer GAT predicting a label column
/// already attached to the graph, trained on the full graph with a random
/// holdout for early stopping. The first layer's attention becomes edge
/// features.
struct AuxTaskSpec {
  enum class Source { kCommunity, kBatch };
  Source source = Source::kCommunity;
  int heads = 8;
  int hidden = 8;
  int epochs = 1000;
  int patience = 100;
  double dropout = 0.5;
  double lr = 0.01;
  double weight_decay = 0.0005;
  double slope = 0.2;
  double holdout_frac = 0.1;
  int batch_size = 256;
  int partition_count = 0;  // 0: max(1, n/64)
};

struct AuxResult {
  ModelParams params;
  Matrix edge_features;  // num_edges x heads
  double holdout_accuracy = 0.0;
  int epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> holdout_loss;
};

AuxResult train_auxiliary(const Graph& g, const AuxTaskSpec& spec,
                          std::uint64_t seed);

/// Full-graph forward pass of a trained auxiliary GAT, returning the
/// first-layer attention record.
AttentionRecord auxiliary_attention(const Graph& g, const AuxTaskSpec& spec,
                                    ModelParams& params);

/// Concatenates [aux1 | aux2 | curvature | node2vec] into the 18-wide table.
/// The curvature and node2vec columns are standardized to zero mean, unit
/// variance; attention columns stay raw in [0, 1].
EdgeFeatureTable assemble_edge_features(const Matrix& aux_community,
                                        const Matrix& aux_batch,
                                        const CurvatureMap& curvature,
                                        const std::vector<double>& node2vec_dot,
                                        const Graph& g);

/// Column subset for ablations, preserving schema order.
EdgeFeatureTable select_edge_features(const EdgeFeatureTable& table,
                                      int aux_heads, bool use_aux_community,
                                      bool use_aux_batch, bool use_curvature,
                                      bool use_node2vec);

struct MainModelConfig {
  std::string backbone = "gcn";  // "gcn" | "gat"
  int gcn_hidden = 256;
  int gat_hidden = 8;  // per head
  int gat_heads = 8;
  double dropout = 0.4;
  double slope = 0.2;
  int st_heads = 2;
  int st_output_dim = 8;
  bool use_edge_features = true;
  int epochs = 1000;
  int patience = 100;
  double lr = 0.01;
  double weight_decay = 0.0005;
  int batch_size = 256;
  int partition_count = 0;
};

MainModelConfig main_config_from(const RunConfig& cfg);

/// Two backbone layers, an optional Set Transformer over each node's edge
/// feature set, and a dense softmax head over the enhanced vector.
struct MainModel {
  MainModelConfig cfg;
  int in_dim = 0;
  int n_classes = 0;
  int backbone_width = 0;  // node representation width
  int table_width = 0;     // 0 without edge features
  std::unique_ptr<ModelParams> params;
  GatLayer gat1, gat2;
  GcnLayer gcn1, gcn2;
  SetTransformerBlock stb;
  DenseLayer head;
};

MainModel build_main_model(const MainModelConfig& cfg, int in_dim,
                           int n_classes, int max_degree, int table_width,
                           std::uint64_t seed);

/// Forward pass over a graph view. `edge_row_map` translates the view's edge
/// ids to table rows (nullptr: identity). Returns per-node class logits.
DiffTensor main_forward(Tape& tape, MainModel& model, const Graph& view,
                        const std::vector<int>* edge_row_map,
                        const EdgeFeatureTable& table, bool training,
                        std::mt19937_64& dropout_rng,
                        Matrix* set_attention = nullptr);

/// Inductive training: parameters are fit on the induced train-node
/// subgraph in cluster mini-batches; validation/test forward passes run on
/// the full graph with training-mode dropout off. Returns the best-value
/// checkpoint (by validation loss, patience-limited) and the run metrics.
SeedRunMetrics train_main(const Graph& g, const EdgeFeatureTable& table,
                          MainModel& model, std::uint64_t seed);

/// Test-mask accuracy of the model on the full graph.
double test_accuracy(MainModel& model, const Graph& g,
                     const EdgeFeatureTable& table);

/// Retrains from scratch for every seed (parallel workers capped by
/// EDGEFORGE_THREADS, merged in seed order) and aggregates accuracy with a
/// 95% t-interval.
RunReport evaluate_runs(const Graph& g, const EdgeFeatureTable& table,
                        const MainModelConfig& cfg,
                        const std::vector<std::uint64_t>& seeds);

/// Welch's t-test of `ours` against `baseline` accuracies, stored on `ours`.
void attach_welch(RunReport& ours, const RunReport& baseline);

/// Runs every generator stage on an already-built graph: Louvain communities
/// (written onto the graph), two auxiliary tasks, curvature, node2vec, and
/// table assembly.
struct EdgeFeatureBundle {
  Matrix aux_community;
  Matrix aux_batch;
  CurvatureMap curvature;
  std::vector<double> node2vec_dot;
  EdgeFeatureTable table;
  double aux_community_accuracy = 0.0;
  double aux_batch_accuracy = 0.0;
};

EdgeFeatureBundle build_edge_features(Graph& g, const RunConfig& cfg,
                                      std::uint64_t seed);

}  // namespace edgeforge
