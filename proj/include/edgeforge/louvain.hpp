#pragma once

#include <cstdint>
#include <tuple>
#include <vector>

#include "edgeforge/graph.hpp"

namespace edgeforge {

struct CommunityAssignment {
  std::vector<int> community;  // dense ids 0..count-1
  int count = 0;
  double modularity = 0.0;
  /// Modularity after each local-move pass (non-decreasing).
  std::vector<double> pass_modularity;
};

/// Weighted undirected modularity of a partition (resolution-scaled null
/// model). Isolated graphs with no edges score 0.
double modularity(int n_nodes,
                  const std::vector<std::tuple<int, int, double>>& und_edges,
                  const std::vector<int>& community, double resolution = 1.0);

/// Two-phase Louvain on an undirected weighted edge list: seeded local moves
/// maximizing modularity gain, then aggregation, repeated to a fixed point.
CommunityAssignment louvain_edges(
    int n_nodes, const std::vector<std::tuple<int, int, double>>& und_edges,
    std::uint64_t seed, double resolution = 1.0);

/// Graph-facing wrapper. The graph is treated as undirected; with
/// `use_weights` the undirected weight is max(w_uv, w_vu), otherwise every
/// edge counts 1 (the message-passing convention: stored distances stay out
/// of the null model).
CommunityAssignment louvain(const Graph& g, std::uint64_t seed,
                            double resolution = 1.0, bool use_weights = false);

}  // namespace edgeforge
