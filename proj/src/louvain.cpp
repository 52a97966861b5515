#include "edgeforge/louvain.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace edgeforge {

namespace {

struct WGraph {
  // adjacency excludes self-loops; loop weight kept separately
  std::vector<std::vector<std::pair<int, double>>> adj;
  std::vector<double> loop;
  double total_weight = 0.0;  // 2m: sum of degrees incl. loops twice

  int n() const { return static_cast<int>(adj.size()); }
  double degree(int u) const {
    double d = loop[u];
    for (const auto& [v, w] : adj[u]) d += w;
    return d;
  }
};

WGraph build_wgraph(int n,
                    const std::vector<std::tuple<int, int, double>>& edges) {
  WGraph g;
  g.adj.assign(n, {});
  g.loop.assign(n, 0.0);
  std::map<std::pair<int, int>, double> acc;
  for (const auto& [u, v, w] : edges) {
    if (u < 0 || u >= n || v < 0 || v >= n) {
      throw std::invalid_argument("louvain: edge endpoint out of range");
    }
    if (u == v) {
      g.loop[u] += 2.0 * w;  // loop contributes twice to its node's degree
    } else {
      acc[{std::min(u, v), std::max(u, v)}] += w;
    }
  }
  for (const auto& [key, w] : acc) {
    g.adj[key.first].emplace_back(key.second, w);
    g.adj[key.second].emplace_back(key.first, w);
  }
  for (int u = 0; u < n; ++u) g.total_weight += g.degree(u);
  return g;
}

double wgraph_modularity(const WGraph& g, const std::vector<int>& comm,
                         double gamma) {
  if (g.total_weight == 0.0) return 0.0;
  double m2 = g.total_weight;
  std::map<int, double> in, tot;
  for (int u = 0; u < g.n(); ++u) {
    tot[comm[u]] += g.degree(u);
    in[comm[u]] += g.loop[u];
    for (const auto& [v, w] : g.adj[u]) {
      if (comm[v] == comm[u]) in[comm[u]] += w;
    }
  }
  double q = 0.0;
  for (const auto& [c, w_in] : in) {
    q += w_in / m2 - gamma * (tot[c] / m2) * (tot[c] / m2);
  }
  return q;
}

// One level of local moves. Returns true if any node changed community.
bool local_moves(const WGraph& g, std::vector<int>& comm, double gamma,
                 std::mt19937_64& rng, std::vector<double>* pass_q) {
  int n = g.n();
  double m2 = g.total_weight;
  if (m2 == 0.0) return false;
  std::vector<double> tot(n, 0.0);
  for (int u = 0; u < n; ++u) tot[comm[u]] += g.degree(u);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  bool any_move = false;
  double prev_q = wgraph_modularity(g, comm, gamma);
  for (int pass = 0; pass < 128; ++pass) {
    bool moved = false;
    for (int u : order) {
      int cu = comm[u];
      double ku = g.degree(u);
      std::map<int, double> links;  // weight from u into each community
      links[cu] += 0.0;
      for (const auto& [v, w] : g.adj[u]) links[comm[v]] += w;
      tot[cu] -= ku;
      double base = links[cu] - gamma * tot[cu] * ku / m2;
      int best_c = cu;
      double best_gain = 0.0;
      for (const auto& [c, w_uc] : links) {
        if (c == cu) continue;
        double gain = (w_uc - gamma * tot[c] * ku / m2) - base;
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_c = c;
        }
      }
      tot[best_c] += ku;
      if (best_c != cu) {
        comm[u] = best_c;
        moved = true;
        any_move = true;
      }
    }
    double q = wgraph_modularity(g, comm, gamma);
    if (pass_q != nullptr) pass_q->push_back(q);
    if (q < prev_q - 1e-9) {
      throw std::logic_error("louvain: modularity decreased within a pass");
    }
    if (!moved || q - prev_q < 1e-12) break;
    prev_q = q;
  }
  return any_move;
}

// Collapses communities into supernodes.
std::pair<WGraph, std::vector<int>> aggregate(const WGraph& g,
                                              const std::vector<int>& comm) {
  std::map<int, int> remap;
  for (int u = 0; u < g.n(); ++u) {
    remap.emplace(comm[u], static_cast<int>(remap.size()));
  }
  int nc = static_cast<int>(remap.size());
  std::vector<int> dense(g.n());
  for (int u = 0; u < g.n(); ++u) dense[u] = remap[comm[u]];
  WGraph cg;
  cg.adj.assign(nc, {});
  cg.loop.assign(nc, 0.0);
  std::map<std::pair<int, int>, double> acc;
  for (int u = 0; u < g.n(); ++u) {
    cg.loop[dense[u]] += g.loop[u];
    for (const auto& [v, w] : g.adj[u]) {
      int cu = dense[u], cv = dense[v];
      if (cu == cv) {
        cg.loop[cu] += w;  // each intra edge visited from both ends
      } else if (cu < cv) {
        acc[{cu, cv}] += w;
      }
    }
  }
  for (const auto& [key, w] : acc) {
    cg.adj[key.first].emplace_back(key.second, w);
    cg.adj[key.second].emplace_back(key.first, w);
  }
  for (int u = 0; u < nc; ++u) cg.total_weight += cg.degree(u);
  return {std::move(cg), std::move(dense)};
}

}  // namespace

double modularity(int n_nodes,
                  const std::vector<std::tuple<int, int, double>>& und_edges,
                  const std::vector<int>& community, double resolution) {
  return wgraph_modularity(build_wgraph(n_nodes, und_edges), community,
                           resolution);
}

CommunityAssignment louvain_edges(
    int n_nodes, const std::vector<std::tuple<int, int, double>>& und_edges,
    std::uint64_t seed, double resolution) {
  if (n_nodes <= 0) {
    throw std::invalid_argument("louvain: empty graph");
  }
  std::mt19937_64 rng(seed);
  WGraph level = build_wgraph(n_nodes, und_edges);
  std::vector<int> node_comm(n_nodes);
  std::iota(node_comm.begin(), node_comm.end(), 0);

  CommunityAssignment result;
  std::vector<int> comm = node_comm;  // current level labels
  while (true) {
    std::vector<int> level_comm(level.n());
    std::iota(level_comm.begin(), level_comm.end(), 0);
    bool improved = local_moves(level, level_comm, resolution, rng,
                                &result.pass_modularity);
    for (int u = 0; u < n_nodes; ++u) node_comm[u] = level_comm[comm[u]];
    if (!improved) break;
    auto [coarse, dense] = aggregate(level, level_comm);
    for (int u = 0; u < n_nodes; ++u) comm[u] = dense[comm[u]];
    if (coarse.n() == level.n()) break;
    level = std::move(coarse);
  }

  // dense relabel in order of first appearance by node id
  std::map<int, int> remap;
  result.community.resize(n_nodes);
  for (int u = 0; u < n_nodes; ++u) {
    auto [it, fresh] =
        remap.emplace(node_comm[u], static_cast<int>(remap.size()));
    result.community[u] = it->second;
    (void)fresh;
  }
  result.count = static_cast<int>(remap.size());
  result.modularity =
      modularity(n_nodes, und_edges, result.community, resolution);
  return result;
}

CommunityAssignment louvain(const Graph& g, std::uint64_t seed,
                            double resolution, bool use_weights) {
  if (g.n_nodes == 0) {
    throw std::invalid_argument("louvain: empty graph");
  }
  std::map<std::pair<int, int>, double> und;
  for (int e = 0; e < g.num_edges(); ++e) {
    std::pair<int, int> key{std::min(g.edge_src[e], g.edge_dst[e]),
                            std::max(g.edge_src[e], g.edge_dst[e])};
    double w = use_weights ? g.edge_weight[e] : 1.0;
    auto [it, fresh] = und.emplace(key, w);
    if (!fresh) it->second = std::max(it->second, w);
  }
  std::vector<std::tuple<int, int, double>> edges;
  edges.reserve(und.size());
  for (const auto& [key, w] : und) {
    edges.emplace_back(key.first, key.second, w);
  }
  return louvain_edges(g.n_nodes, edges, seed, resolution);
}

}  // namespace edgeforge
