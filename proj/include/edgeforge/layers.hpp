#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "edgeforge/graph.hpp"
#include "edgeforge/optim.hpp"
#include "edgeforge/tensor.hpp"

namespace edgeforge {

/// Attention entries for one graph: per node, its out-neighbors plus a
/// self-loop, ascending by attended node id. Entries are grouped per
/// attending node (segments given by `offsets`).
struct AttentionIndex {
  std::vector<int> att_src;  // attending node i
  std::vector<int> att_dst;  // attended node j
  std::vector<int> edge_id;  // graph edge id, -1 for the self-loop
  std::vector<int> offsets;  // n_nodes + 1 segment bounds
};

AttentionIndex build_attention_index(const Graph& g);

/// Normalized attention coefficients captured from one GAT layer.
struct AttentionRecord {
  int heads = 0;
  std::vector<int> att_src;
  std::vector<int> att_dst;
  std::vector<int> edge_id;
  std::vector<int> offsets;
  Matrix alpha;  // entries x heads
};

enum class GatMode {
  kConcat,   // concatenate heads, ELU nonlinearity (hidden layers)
  kAverage,  // average heads, linear output (prediction layer logits)
};

struct GatLayer {
  int in_dim = 0;
  int out_dim = 0;  // per head
  int heads = 1;
  GatMode mode = GatMode::kConcat;
  double slope = 0.2;
  std::vector<ParamTensor*> w;      // per head, in_dim x out_dim
  std::vector<ParamTensor*> a_src;  // per head, out_dim x 1
  std::vector<ParamTensor*> a_dst;  // per head, out_dim x 1

  int output_width() const {
    return mode == GatMode::kConcat ? heads * out_dim : out_dim;
  }
};

GatLayer make_gat_layer(ModelParams& params, const std::string& prefix,
                        int in_dim, int out_dim, int heads, GatMode mode,
                        std::mt19937_64& rng, double slope = 0.2);

/// Scores e_ij = LeakyReLU(a_src . W h_i + a_dst . W h_j), softmax over each
/// node's neighborhood (self-loop included), then the alpha-weighted sum of
/// transformed neighbor features. Fills `record` with the normalized
/// coefficients when non-null.
DiffTensor gat_forward(Tape& tape, const GatLayer& layer,
                       const AttentionIndex& index, DiffTensor h,
                       AttentionRecord* record = nullptr);

/// Per-edge attention features (Lambda): head coefficients concatenated,
/// self-loop entries dropped. Rows align with graph edge ids.
Matrix extract_edge_features(const AttentionRecord& record);

struct GcnLayer {
  int in_dim = 0;
  int out_dim = 0;
  ParamTensor* w = nullptr;
  ParamTensor* b = nullptr;
};

GcnLayer make_gcn_layer(ModelParams& params, const std::string& prefix,
                        int in_dim, int out_dim, std::mt19937_64& rng);

/// Symmetric-normalized self-loop-augmented adjacency over the stored
/// out-edge structure: coeff(i->j) = 1/sqrt((1+deg_i)(1+deg_j)).
std::shared_ptr<const SparseOp> gcn_norm_adjacency(const Graph& g);

DiffTensor gcn_forward(Tape& tape, const GcnLayer& layer,
                       const std::shared_ptr<const SparseOp>& adj,
                       DiffTensor h, bool apply_relu);

struct DenseLayer {
  int in_dim = 0;
  int out_dim = 0;
  ParamTensor* w = nullptr;
  ParamTensor* b = nullptr;
};

DenseLayer make_dense_layer(ModelParams& params, const std::string& prefix,
                            int in_dim, int out_dim, std::mt19937_64& rng);

DiffTensor dense_forward(Tape& tape, const DenseLayer& layer, DiffTensor h);

}  // namespace edgeforge
