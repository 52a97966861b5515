#include "edgeforge/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace edgeforge {

double CurvatureMap::at(int u, int v) const {
  std::pair<int, int> key{std::min(u, v), std::max(u, v)};
  auto it = std::lower_bound(edges.begin(), edges.end(), key);
  if (it == edges.end() || *it != key) {
    throw std::out_of_range("CurvatureMap: no edge (" + std::to_string(u) +
                            ", " + std::to_string(v) + ")");
  }
  return values[it - edges.begin()];
}

CurvatureMap forman_ricci(const Graph& g,
                          const std::vector<double>& node_weights) {
  if (!node_weights.empty() &&
      static_cast<int>(node_weights.size()) != g.n_nodes) {
    throw std::invalid_argument("forman_ricci: node weight length mismatch");
  }
  auto w_node = [&](int v) {
    return node_weights.empty() ? 1.0 : node_weights[v];
  };

  CurvatureMap cm;
  std::map<std::pair<int, int>, double> und;
  for (int e = 0; e < g.num_edges(); ++e) {
    double w = g.edge_weight[e];
    if (w < 0.0) {
      throw std::invalid_argument("forman_ricci: negative weight on edge " +
                                  std::to_string(e));
    }
    std::pair<int, int> key{std::min(g.edge_src[e], g.edge_dst[e]),
                            std::max(g.edge_src[e], g.edge_dst[e])};
    auto [it, fresh] = und.emplace(key, w);
    if (!fresh) it->second = std::max(it->second, w);
  }
  for (auto& [key, w] : und) {
    if (w == 0.0) {
      w = 1e-12;
      cm.clamped = true;
    }
  }

  std::vector<std::vector<std::pair<int, double>>> incident(g.n_nodes);
  for (const auto& [key, w] : und) {
    incident[key.first].emplace_back(key.second, w);
    incident[key.second].emplace_back(key.first, w);
  }

  cm.edges.reserve(und.size());
  cm.values.reserve(und.size());
  for (const auto& [key, we] : und) {
    auto [v1, v2] = key;
    double acc = w_node(v1) / we + w_node(v2) / we;
    for (const auto& [other, wf] : incident[v1]) {
      if (other == v2) continue;
      acc -= w_node(v1) / std::sqrt(we * wf);
    }
    for (const auto& [other, wf] : incident[v2]) {
      if (other == v1) continue;
      acc -= w_node(v2) / std::sqrt(we * wf);
    }
    cm.edges.push_back(key);
    cm.values.push_back(we * acc);
  }
  return cm;
}

}  // namespace edgeforge
