#pragma once

#include <cstdint>
#include <vector>

#include "edgeforge/graph.hpp"

namespace edgeforge {

struct Node2VecConfig {
  int dim = 16;
  double p = 1.0;  // return parameter
  double q = 1.0;  // in-out parameter
  int walk_len = 20;
  int walks_per_node = 10;
  int window = 5;
  int negatives = 5;
  double lr0 = 0.025;  // linearly decayed
};

struct NodeEmbedding {
  Matrix vectors;  // n_nodes x dim; zero rows for isolated nodes
  std::vector<std::uint8_t> isolated;
  Node2VecConfig config;
};

/// Second-order biased random walks over the undirected view of the graph.
/// Each inner vector is one walk (node ids); isolated nodes produce none.
std::vector<std::vector<int>> node2vec_walks(const Graph& g,
                                             const Node2VecConfig& cfg,
                                             std::uint64_t seed);

/// Skip-gram with negative sampling trained by SGD on the walk corpus.
/// Deterministic under seed; single-threaded.
NodeEmbedding node2vec_embed(const Graph& g, const Node2VecConfig& cfg,
                             std::uint64_t seed);

/// Dot product of endpoint embeddings for every directed edge of the graph,
/// aligned with edge ids.
std::vector<double> edge_dot_features(const NodeEmbedding& emb,
                                      const Graph& g);

}  // namespace edgeforge
