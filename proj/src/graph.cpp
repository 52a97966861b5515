#include "edgeforge/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace edgeforge {

int Graph::max_out_degree() const {
  int m = 0;
  for (int i = 0; i < n_nodes; ++i) m = std::max(m, out_degree(i));
  return m;
}

int Graph::find_edge(int src, int dst) const {
  auto begin = edge_dst.begin() + csr_offsets[src];
  auto end = edge_dst.begin() + csr_offsets[src + 1];
  auto it = std::lower_bound(begin, end, dst);
  if (it == end || *it != dst) return -1;
  return static_cast<int>(it - edge_dst.begin());
}

Graph make_graph(int n_nodes, std::vector<EdgeTriple> edges, Matrix features) {
  Graph g;
  g.n_nodes = n_nodes;
  std::sort(edges.begin(), edges.end(),
            [](const EdgeTriple& a, const EdgeTriple& b) {
              return std::tie(std::get<0>(a), std::get<1>(a)) <
                     std::tie(std::get<0>(b), std::get<1>(b));
            });
  g.edge_src.reserve(edges.size());
  g.edge_dst.reserve(edges.size());
  g.edge_weight.reserve(edges.size());
  for (const auto& [s, d, w] : edges) {
    g.edge_src.push_back(s);
    g.edge_dst.push_back(d);
    g.edge_weight.push_back(w);
  }
  g.csr_offsets.assign(n_nodes + 1, 0);
  for (int s : g.edge_src) g.csr_offsets[s + 1]++;
  for (int i = 0; i < n_nodes; ++i) g.csr_offsets[i + 1] += g.csr_offsets[i];
  g.features = std::move(features);
  validate_graph(g);
  return g;
}

void validate_graph(const Graph& g) {
  if (g.n_nodes < 0) throw std::runtime_error("graph: negative node count");
  if (static_cast<int>(g.csr_offsets.size()) != g.n_nodes + 1 ||
      g.csr_offsets.front() != 0 || g.csr_offsets.back() != g.num_edges()) {
    throw std::runtime_error("graph: CSR offsets inconsistent");
  }
  for (int i = 0; i < g.n_nodes; ++i) {
    if (g.csr_offsets[i] > g.csr_offsets[i + 1]) {
      throw std::runtime_error("graph: CSR offsets not monotone");
    }
  }
  for (int e = 0; e < g.num_edges(); ++e) {
    int s = g.edge_src[e], d = g.edge_dst[e];
    if (s < 0 || s >= g.n_nodes || d < 0 || d >= g.n_nodes) {
      throw std::runtime_error("graph: edge endpoint out of range at edge " +
                               std::to_string(e));
    }
    if (s == d) {
      throw std::runtime_error("graph: self-loop stored at edge " +
                               std::to_string(e));
    }
    if (!(g.edge_weight[e] >= 0.0) || !std::isfinite(g.edge_weight[e])) {
      throw std::runtime_error("graph: bad edge weight at edge " +
                               std::to_string(e));
    }
    if (e > 0 && std::tie(g.edge_src[e - 1], g.edge_dst[e - 1]) >=
                     std::tie(s, d)) {
      throw std::runtime_error("graph: edges not strictly sorted");
    }
  }
  if (g.features.size() > 0 && g.features.rows() != g.n_nodes) {
    throw std::runtime_error("graph: feature row count mismatch");
  }
  auto check_labels = [&](const std::vector<int>& v, const char* what) {
    if (!v.empty() && static_cast<int>(v.size()) != g.n_nodes) {
      throw std::runtime_error(std::string("graph: ") + what +
                               " length mismatch");
    }
  };
  check_labels(g.batch_ids, "batch ids");
  check_labels(g.community_ids, "community ids");
  check_labels(g.class_ids, "class ids");
  auto check_mask = [&](const std::vector<std::uint8_t>& m, const char* what) {
    if (!m.empty() && static_cast<int>(m.size()) != g.n_nodes) {
      throw std::runtime_error(std::string("graph: ") + what +
                               " mask length mismatch");
    }
  };
  check_mask(g.train_mask, "train");
  check_mask(g.val_mask, "val");
  check_mask(g.test_mask, "test");
  if (!g.train_mask.empty() && !g.val_mask.empty() && !g.test_mask.empty()) {
    for (int i = 0; i < g.n_nodes; ++i) {
      if (g.train_mask[i] + g.val_mask[i] + g.test_mask[i] > 1) {
        throw std::runtime_error("graph: masks overlap at node " +
                                 std::to_string(i));
      }
    }
  }
}

std::vector<std::pair<int, int>> neighborhood(const Graph& g, int i) {
  if (i < 0 || i >= g.n_nodes) {
    throw std::out_of_range("neighborhood: node " + std::to_string(i) +
                            " out of range");
  }
  std::vector<std::pair<int, int>> out;
  out.reserve(g.out_degree(i));
  for (int e = g.csr_offsets[i]; e < g.csr_offsets[i + 1]; ++e) {
    out.emplace_back(g.edge_dst[e], e);
  }
  return out;  // CSR keeps dst ascending
}

Graph symmetrized(const Graph& g) {
  std::vector<EdgeTriple> edges;
  edges.reserve(g.edge_src.size() * 2);
  for (int e = 0; e < g.num_edges(); ++e) {
    edges.emplace_back(g.edge_src[e], g.edge_dst[e], g.edge_weight[e]);
  }
  for (int e = 0; e < g.num_edges(); ++e) {
    if (g.find_edge(g.edge_dst[e], g.edge_src[e]) < 0) {
      edges.emplace_back(g.edge_dst[e], g.edge_src[e], g.edge_weight[e]);
    }
  }
  Graph out = make_graph(g.n_nodes, std::move(edges), g.features);
  out.batch_ids = g.batch_ids;
  out.community_ids = g.community_ids;
  out.class_ids = g.class_ids;
  out.train_mask = g.train_mask;
  out.val_mask = g.val_mask;
  out.test_mask = g.test_mask;
  return out;
}

void validate_edge_features(const EdgeFeatureTable& t, const Graph& g,
                            int attention_cols) {
  if (t.rows.rows() != g.num_edges()) {
    throw std::runtime_error("edge features: row count " +
                             std::to_string(t.rows.rows()) +
                             " != edge count " +
                             std::to_string(g.num_edges()));
  }
  if (attention_cols > t.width()) {
    throw std::runtime_error("edge features: schema narrower than table");
  }
  for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
    for (int c = 0; c < attention_cols; ++c) {
      double v = t.rows(r, c);
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) {
        throw std::runtime_error("edge features: attention column " +
                                 std::to_string(c) + " out of [0,1] at row " +
                                 std::to_string(r));
      }
    }
    if (!t.rows.row(r).allFinite()) {
      throw std::runtime_error("edge features: non-finite row " +
                               std::to_string(r));
    }
  }
}

std::vector<int> Partition::part_size() const {
  std::vector<int> sz(parts, 0);
  for (int a : assignment) sz[a]++;
  return sz;
}

namespace {

// Undirected view with unit weights per unique pair, used for coarsening,
// growth and refinement.
struct LevelGraph {
  std::vector<std::vector<std::pair<int, double>>> adj;
  std::vector<int> node_weight;
  int n() const { return static_cast<int>(adj.size()); }
};

LevelGraph undirected_level(const Graph& g) {
  LevelGraph lg;
  lg.adj.assign(g.n_nodes, {});
  lg.node_weight.assign(g.n_nodes, 1);
  for (int e = 0; e < g.num_edges(); ++e) {
    int u = g.edge_src[e], v = g.edge_dst[e];
    if (u < v || g.find_edge(v, u) < 0) {
      lg.adj[u].emplace_back(v, 1.0);
      lg.adj[v].emplace_back(u, 1.0);
    }
  }
  for (auto& a : lg.adj) std::sort(a.begin(), a.end());
  return lg;
}

// Heavy-edge matching; returns the coarse graph and fine->coarse map.
std::pair<LevelGraph, std::vector<int>> coarsen(const LevelGraph& g,
                                                int max_weight,
                                                std::mt19937_64& rng) {
  int n = g.n();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> match(n, -1);
  for (int u : order) {
    if (match[u] >= 0) continue;
    int best = -1;
    double best_w = -1.0;
    for (const auto& [v, w] : g.adj[u]) {
      if (match[v] >= 0) continue;
      if (g.node_weight[u] + g.node_weight[v] > max_weight) continue;
      if (w > best_w || (w == best_w && v < best)) {
        best = v;
        best_w = w;
      }
    }
    if (best >= 0) {
      match[u] = best;
      match[best] = u;
    } else {
      match[u] = u;
    }
  }
  std::vector<int> fine_to_coarse(n, -1);
  int nc = 0;
  for (int u = 0; u < n; ++u) {
    if (fine_to_coarse[u] >= 0) continue;
    fine_to_coarse[u] = nc;
    if (match[u] != u) fine_to_coarse[match[u]] = nc;
    nc++;
  }
  LevelGraph cg;
  cg.adj.assign(nc, {});
  cg.node_weight.assign(nc, 0);
  for (int u = 0; u < n; ++u) cg.node_weight[fine_to_coarse[u]] += g.node_weight[u];
  std::vector<std::map<int, double>> acc(nc);
  for (int u = 0; u < n; ++u) {
    int cu = fine_to_coarse[u];
    for (const auto& [v, w] : g.adj[u]) {
      int cv = fine_to_coarse[v];
      if (cu < cv) acc[cu][cv] += w;
    }
  }
  for (int cu = 0; cu < nc; ++cu) {
    for (const auto& [cv, w] : acc[cu]) {
      cg.adj[cu].emplace_back(cv, w);
      cg.adj[cv].emplace_back(cu, w);
    }
  }
  for (auto& a : cg.adj) std::sort(a.begin(), a.end());
  return {std::move(cg), std::move(fine_to_coarse)};
}

// Greedy graph growing: parts carved one by one toward an adaptive target.
std::vector<int> initial_partition(const LevelGraph& g, int parts) {
  int n = g.n();
  int total = std::accumulate(g.node_weight.begin(), g.node_weight.end(), 0);
  std::vector<int> assign(n, -1);
  int assigned_weight = 0;
  for (int p = 0; p + 1 < parts; ++p) {
    double target =
        static_cast<double>(total - assigned_weight) / (parts - p);
    std::vector<double> gain(n, 0.0);
    std::vector<std::uint8_t> in_frontier(n, 0);
    int part_weight = 0;
    while (part_weight < target) {
      int pick = -1;
      double best = -1.0;
      for (int u = 0; u < n; ++u) {
        if (assign[u] >= 0 || !in_frontier[u]) continue;
        if (gain[u] > best) {
          best = gain[u];
          pick = u;
        }
      }
      if (pick < 0) {
        // empty frontier: new seed = lowest-id unassigned node
        for (int u = 0; u < n && pick < 0; ++u) {
          if (assign[u] < 0) pick = u;
        }
        if (pick < 0) break;
        if (part_weight > 0 && part_weight + g.node_weight[pick] > target) {
          break;  // do not jump components once the part is near target
        }
      }
      assign[pick] = p;
      part_weight += g.node_weight[pick];
      assigned_weight += g.node_weight[pick];
      in_frontier[pick] = 0;
      for (const auto& [v, w] : g.adj[pick]) {
        if (assign[v] < 0) {
          gain[v] += w;
          in_frontier[v] = 1;
        }
      }
    }
  }
  for (int u = 0; u < n; ++u) {
    if (assign[u] < 0) assign[u] = parts - 1;
  }
  return assign;
}

// Boundary refinement with balance bounds on part weights.
void refine(const LevelGraph& g, std::vector<int>& assign, int parts, int lo,
            int hi, int passes) {
  int n = g.n();
  std::vector<int> weight(parts, 0);
  for (int u = 0; u < n; ++u) weight[assign[u]] += g.node_weight[u];
  for (int pass = 0; pass < passes; ++pass) {
    bool moved = false;
    for (int u = 0; u < n; ++u) {
      int cur = assign[u];
      std::map<int, double> conn;
      for (const auto& [v, w] : g.adj[u]) conn[assign[v]] += w;
      double cur_conn = conn.count(cur) ? conn[cur] : 0.0;
      int best_part = cur;
      double best_gain = 0.0;
      for (const auto& [p, w] : conn) {
        if (p == cur) continue;
        if (weight[p] + g.node_weight[u] > hi) continue;
        if (weight[cur] - g.node_weight[u] < lo) continue;
        double gain = w - cur_conn;
        if (gain > best_gain ||
            (gain == best_gain && gain > 0.0 && p < best_part)) {
          best_gain = gain;
          best_part = p;
        }
      }
      if (best_part != cur) {
        weight[cur] -= g.node_weight[u];
        weight[best_part] += g.node_weight[u];
        assign[u] = best_part;
        moved = true;
      }
    }
    if (!moved) break;
  }
}

// Forces every part weight into [lo, hi]; preferring boundary moves.
void repair_balance(const LevelGraph& g, std::vector<int>& assign, int parts,
                    int lo, int hi) {
  int n = g.n();
  std::vector<int> weight(parts, 0);
  for (int u = 0; u < n; ++u) weight[assign[u]] += g.node_weight[u];
  auto move_one = [&](int from, int to) {
    int pick = -1;
    double best = -1.0;
    for (int u = 0; u < n; ++u) {
      if (assign[u] != from) continue;
      double conn = 0.0;
      for (const auto& [v, w] : g.adj[u]) {
        if (assign[v] == to) conn += w;
      }
      if (conn > best) {
        best = conn;
        pick = u;
      }
    }
    if (pick < 0) return false;
    assign[pick] = to;
    weight[from] -= g.node_weight[pick];
    weight[to] += g.node_weight[pick];
    return true;
  };
  for (int guard = 0; guard < 4 * n; ++guard) {
    int over = -1, under = -1;
    for (int p = 0; p < parts; ++p) {
      if (weight[p] > hi && (over < 0 || weight[p] > weight[over])) over = p;
      if (weight[p] < lo && (under < 0 || weight[p] < weight[under])) under = p;
    }
    if (over < 0 && under < 0) break;
    if (under >= 0) {
      int donor = 0;
      for (int p = 1; p < parts; ++p) {
        if (weight[p] > weight[donor]) donor = p;
      }
      if (!move_one(donor, under)) break;
    } else {
      int taker = 0;
      for (int p = 1; p < parts; ++p) {
        if (weight[p] < weight[taker]) taker = p;
      }
      if (!move_one(over, taker)) break;
    }
  }
}

}  // namespace

Partition partition_graph(const Graph& g, int parts, std::uint64_t seed) {
  if (parts < 1 || parts > g.n_nodes) {
    throw std::invalid_argument("partition_graph: parts must be in [1, n]");
  }
  Partition out;
  out.parts = parts;
  if (parts == 1) {
    out.assignment.assign(g.n_nodes, 0);
    return out;
  }
  if (parts == g.n_nodes) {
    out.assignment.resize(g.n_nodes);
    std::iota(out.assignment.begin(), out.assignment.end(), 0);
    return out;
  }
  std::mt19937_64 rng(seed);
  double t = static_cast<double>(g.n_nodes) / parts;
  int lo = std::max(1, static_cast<int>(std::floor(0.8 * t)));
  int hi = std::max(lo, static_cast<int>(std::ceil(1.2 * t)));

  std::vector<LevelGraph> levels;
  std::vector<std::vector<int>> maps;
  levels.push_back(undirected_level(g));
  int max_node_weight = std::max(1, static_cast<int>(std::floor(0.4 * t)));
  while (levels.back().n() > std::max(4 * parts, 64)) {
    auto [cg, map] = coarsen(levels.back(), max_node_weight, rng);
    if (cg.n() >= levels.back().n()) break;  // matching stalled
    levels.push_back(std::move(cg));
    maps.push_back(std::move(map));
  }
  std::vector<int> assign = initial_partition(levels.back(), parts);
  refine(levels.back(), assign, parts, lo, hi, 4);
  for (int lvl = static_cast<int>(levels.size()) - 2; lvl >= 0; --lvl) {
    std::vector<int> fine_assign(levels[lvl].n());
    for (int u = 0; u < levels[lvl].n(); ++u) {
      fine_assign[u] = assign[maps[lvl][u]];
    }
    assign = std::move(fine_assign);
    refine(levels[lvl], assign, parts, lo, hi, 2);
  }
  repair_balance(levels.front(), assign, parts, lo, hi);
  refine(levels.front(), assign, parts, lo, hi, 2);
  repair_balance(levels.front(), assign, parts, lo, hi);

  out.assignment = std::move(assign);
  auto sizes = out.part_size();
  for (int p = 0; p < parts; ++p) {
    if (sizes[p] < lo || sizes[p] > hi) {
      throw std::runtime_error("partition_graph: balance violated for part " +
                               std::to_string(p));
    }
  }
  return out;
}

Subgraph induced_subgraph(const Graph& g, const std::vector<int>& nodes) {
  Subgraph sub;
  sub.global_nodes = nodes;
  std::sort(sub.global_nodes.begin(), sub.global_nodes.end());
  std::vector<int> local(g.n_nodes, -1);
  for (std::size_t i = 0; i < sub.global_nodes.size(); ++i) {
    local[sub.global_nodes[i]] = static_cast<int>(i);
  }
  std::vector<EdgeTriple> edges;
  std::vector<int> global_edges;
  for (int gi : sub.global_nodes) {
    for (int e = g.csr_offsets[gi]; e < g.csr_offsets[gi + 1]; ++e) {
      int d = g.edge_dst[e];
      if (local[d] >= 0) {
        edges.emplace_back(local[gi], local[d], g.edge_weight[e]);
        global_edges.push_back(e);
      }
    }
  }
  // make_graph re-sorts identically: source-major order is preserved
  int k = static_cast<int>(sub.global_nodes.size());
  Matrix feats;
  if (g.features.size() > 0) {
    feats.resize(k, g.features.cols());
    for (int i = 0; i < k; ++i) feats.row(i) = g.features.row(sub.global_nodes[i]);
  }
  sub.graph = make_graph(k, std::move(edges), std::move(feats));
  sub.global_edges = std::move(global_edges);
  auto gather_int = [&](const std::vector<int>& src) {
    std::vector<int> out;
    if (src.empty()) return out;
    out.resize(k);
    for (int i = 0; i < k; ++i) out[i] = src[sub.global_nodes[i]];
    return out;
  };
  auto gather_mask = [&](const std::vector<std::uint8_t>& src) {
    std::vector<std::uint8_t> out;
    if (src.empty()) return out;
    out.resize(k);
    for (int i = 0; i < k; ++i) out[i] = src[sub.global_nodes[i]];
    return out;
  };
  sub.graph.batch_ids = gather_int(g.batch_ids);
  sub.graph.community_ids = gather_int(g.community_ids);
  sub.graph.class_ids = gather_int(g.class_ids);
  sub.graph.train_mask = gather_mask(g.train_mask);
  sub.graph.val_mask = gather_mask(g.val_mask);
  sub.graph.test_mask = gather_mask(g.test_mask);
  return sub;
}

std::vector<Subgraph> minibatch_epoch(const Graph& g, const Partition& part,
                                      int batch_size, std::uint64_t seed) {
  if (batch_size < 1) {
    throw std::invalid_argument("minibatch_epoch: batch_size must be >= 1");
  }
  std::vector<int> order(part.parts);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> members(part.parts);
  for (int u = 0; u < g.n_nodes; ++u) {
    members[part.assignment[u]].push_back(u);
  }
  std::vector<Subgraph> batches;
  for (int b = 0; b * batch_size < part.parts; ++b) {
    std::vector<int> nodes;
    for (int j = b * batch_size;
         j < std::min((b + 1) * batch_size, part.parts); ++j) {
      nodes.insert(nodes.end(), members[order[j]].begin(),
                   members[order[j]].end());
    }
    batches.push_back(induced_subgraph(g, nodes));
  }
  return batches;
}

}  // namespace edgeforge
