#pragma once

#include <utility>
#include <vector>

#include "edgeforge/louvain.hpp"
#include "edgeforge/pipeline.hpp"

namespace edgeforge {

/// Per-head ranked input-feature saliency from first-layer GAT weights:
/// the L2 norm of each input feature's weight row, min-max normalized per
/// head. Ties rank by feature index.
struct SaliencyReport {
  int top_k = 5;
  /// per head: (feature index, normalized weight), descending weight
  std::vector<std::vector<std::pair<int, double>>> per_head;
};

SaliencyReport gene_saliency(const MainModel& model, int top_k = 5);

/// Importance of each edge-feature column: mean absolute weight mapping the
/// column through the lift composed with each head's query projection,
/// averaged over heads and normalized to sum 1 (uniform when degenerate).
Vector edge_feature_importance(const MainModel& model);

/// Graph re-weighted by Set Transformer attention: per node, the STB's
/// softmax mass is averaged over heads and query positions, giving one mass
/// per incident out-edge (summing to 1); masses are then averaged over the
/// directions present. Louvain on the result gives the communities.
struct AttentionGraph {
  std::vector<std::pair<int, int>> edges;  // undirected (u < v)
  std::vector<double> weights;
  CommunityAssignment communities;
};

AttentionGraph attention_graph(MainModel& model, const Graph& g,
                               const EdgeFeatureTable& table,
                               std::uint64_t seed,
                               double louvain_resolution = 1.0);

/// Per-directed-edge attention mass (before direction averaging); each
/// node's out-edge masses sum to 1.
std::vector<double> set_attention_mass(MainModel& model, const Graph& g,
                                       const EdgeFeatureTable& table);

}  // namespace edgeforge
