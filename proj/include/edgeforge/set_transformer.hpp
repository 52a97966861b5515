#pragma once

#include <random>
#include <string>
#include <vector>

#include "edgeforge/graph.hpp"
#include "edgeforge/optim.hpp"
#include "edgeforge/tensor.hpp"

namespace edgeforge {

struct SetTransformerConfig {
  int input_dim = 18;
  int model_dim = 8;  // also the output width
  int heads = 2;
  int max_set_size = 0;  // M, fixed at model build from the max degree
};

/// Single Set Transformer block: learned lift input_dim -> model_dim,
/// multihead self-attention with residual + layer norm, row-wise feedforward
/// with residual + layer norm, and learnable per-position pooling weights.
struct SetTransformerBlock {
  SetTransformerConfig cfg;
  ParamTensor* lift_w = nullptr;
  ParamTensor* lift_b = nullptr;
  std::vector<ParamTensor*> w_q;  // per head, d x d/h
  std::vector<ParamTensor*> w_k;
  std::vector<ParamTensor*> w_v;
  ParamTensor* w_o = nullptr;  // d x d
  ParamTensor* ff_w1 = nullptr;
  ParamTensor* ff_b1 = nullptr;
  ParamTensor* ff_w2 = nullptr;
  ParamTensor* ff_b2 = nullptr;
  ParamTensor* ln1_g = nullptr;
  ParamTensor* ln1_b = nullptr;
  ParamTensor* ln2_g = nullptr;
  ParamTensor* ln2_b = nullptr;
  ParamTensor* lambda = nullptr;  // M x 1 pooling weights, init 1/M
};

SetTransformerBlock make_set_transformer(ModelParams& params,
                                         const std::string& prefix,
                                         const SetTransformerConfig& cfg,
                                         std::mt19937_64& rng);

/// Multihead scaled dot-product attention over blocks of `rows_per_block`
/// rows (one block per set). Heads are projected, attended with the per-head
/// scale 1/sqrt(d/h), concatenated and mapped by W_O. When `attn` is
/// non-null it receives the head-averaged softmax matrices,
/// [(B*rows_per_block) x rows_per_block].
DiffTensor multihead(Tape& tape, const SetTransformerBlock& block,
                     DiffTensor q, DiffTensor k, DiffTensor v,
                     int rows_per_block,
                     const std::vector<std::uint8_t>& key_mask,
                     Matrix* attn = nullptr);

/// STB(S) = LayerNorm(X + rFF(X)), X = LayerNorm(S + Multihead(S, S, S)).
/// Inputs of width input_dim are lifted to model_dim first.
DiffTensor stb_forward(Tape& tape, const SetTransformerBlock& block,
                       DiffTensor s, int rows_per_block,
                       const std::vector<std::uint8_t>& key_mask,
                       Matrix* attn = nullptr);

/// Fixed-length pooling: out_b = sum_r mask * lambda_r * row(b, r).
DiffTensor pool_set(Tape& tape, const SetTransformerBlock& block,
                    DiffTensor rows_out, int rows_per_block,
                    const std::vector<std::uint8_t>& pool_mask);

/// Padded gather layout for the per-node edge-feature sets of a graph.
/// Row b*M + r of the gathered matrix holds the feature row of node b's
/// r-th out-edge (ascending neighbor id); -1 gathers a zero row. Isolated
/// nodes keep one enabled dummy key so attention stays well-defined, but
/// pool to the zero vector.
struct SetBatchPlan {
  int n_sets = 0;
  int m = 0;
  std::vector<int> gather_idx;
  std::vector<std::uint8_t> attn_mask;
  std::vector<std::uint8_t> pool_mask;
  std::vector<std::uint8_t> isolated;
  /// Table row feeding each plan slot (-1 for padding), same as gather_idx.
  int slot_row(int set, int r) const { return gather_idx[set * m + r]; }
};

/// `edge_row_map` translates local edge ids to table rows (nullptr when the
/// graph's edge ids already index the table). Throws if any out-degree
/// exceeds `m`.
SetBatchPlan build_set_plan(const Graph& g, int m,
                            const std::vector<int>* edge_row_map = nullptr);

/// Gathers each node's edge-feature set, runs the block and pools, giving
/// one model_dim-wide row per node.
DiffTensor encode_edge_sets(Tape& tape, const SetTransformerBlock& block,
                            DiffTensor table, const SetBatchPlan& plan,
                            Matrix* attn = nullptr);

/// Single-node convenience: the pooled encoding of node i's edge set.
Vector encode_edge_set(Tape& tape, const SetTransformerBlock& block,
                       const EdgeFeatureTable& table, const Graph& g, int i);

}  // namespace edgeforge
