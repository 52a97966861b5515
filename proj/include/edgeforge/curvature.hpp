#pragma once

#include <utility>
#include <vector>

#include "edgeforge/graph.hpp"

namespace edgeforge {

/// Forman-Ricci curvature per undirected edge. Symmetric by construction:
/// the value stored for (u, v) with u < v serves both directions.
struct CurvatureMap {
  std::vector<std::pair<int, int>> edges;  // (u, v) with u < v, sorted
  std::vector<double> values;
  /// True when some zero-weight edge had to be clamped to epsilon.
  bool clamped = false;

  double at(int u, int v) const;
};

/// Ric_F(e) = w(e) * [ w(v1)/w(e) + w(v2)/w(e)
///                     - sum_{f ~ v1, f != e} w(v1)/sqrt(w(e) w(f))
///                     - sum_{f ~ v2, f != e} w(v2)/sqrt(w(e) w(f)) ].
/// Directed edges are collapsed to undirected ones (weight = max of the two
/// directions). Node weights default to 1 when empty. Zero edge weights are
/// clamped to 1e-12; negative weights are an error.
CurvatureMap forman_ricci(const Graph& g,
                          const std::vector<double>& node_weights = {});

}  // namespace edgeforge
