#include "edgeforge/node2vec.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace edgeforge {

namespace {

std::vector<std::vector<int>> undirected_adjacency(const Graph& g) {
  std::vector<std::vector<int>> adj(g.n_nodes);
  for (int e = 0; e < g.num_edges(); ++e) {
    adj[g.edge_src[e]].push_back(g.edge_dst[e]);
    adj[g.edge_dst[e]].push_back(g.edge_src[e]);
  }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return adj;
}

bool adjacent(const std::vector<std::vector<int>>& adj, int u, int v) {
  return std::binary_search(adj[u].begin(), adj[u].end(), v);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<std::vector<int>> node2vec_walks(const Graph& g,
                                             const Node2VecConfig& cfg,
                                             std::uint64_t seed) {
  if (g.num_edges() == 0) {
    throw std::invalid_argument("node2vec: graph has no edges");
  }
  auto adj = undirected_adjacency(g);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<std::vector<int>> walks;
  std::vector<double> bias;
  for (int w = 0; w < cfg.walks_per_node; ++w) {
    for (int start = 0; start < g.n_nodes; ++start) {
      if (adj[start].empty()) continue;
      std::vector<int> walk{start};
      walk.reserve(cfg.walk_len);
      while (static_cast<int>(walk.size()) < cfg.walk_len) {
        int cur = walk.back();
        const auto& nb = adj[cur];
        if (nb.empty()) break;
        int next;
        if (walk.size() == 1) {
          next = nb[static_cast<std::size_t>(u01(rng) * nb.size()) %
                    nb.size()];
        } else {
          int prev = walk[walk.size() - 2];
          bias.resize(nb.size());
          double total = 0.0;
          for (std::size_t i = 0; i < nb.size(); ++i) {
            double b;
            if (nb[i] == prev) {
              b = 1.0 / cfg.p;
            } else if (adjacent(adj, nb[i], prev)) {
              b = 1.0;
            } else {
              b = 1.0 / cfg.q;
            }
            bias[i] = b;
            total += b;
          }
          double r = u01(rng) * total;
          std::size_t pick = 0;
          for (; pick + 1 < nb.size(); ++pick) {
            if (r < bias[pick]) break;
            r -= bias[pick];
          }
          next = nb[pick];
        }
        walk.push_back(next);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

NodeEmbedding node2vec_embed(const Graph& g, const Node2VecConfig& cfg,
                             std::uint64_t seed) {
  auto walks = node2vec_walks(g, cfg, seed);
  auto adj = undirected_adjacency(g);

  NodeEmbedding emb;
  emb.config = cfg;
  emb.isolated.assign(g.n_nodes, 0);

  std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Matrix in_vec(g.n_nodes, cfg.dim), out_vec = Matrix::Zero(g.n_nodes, cfg.dim);
  double init = 0.5 / cfg.dim;
  for (int i = 0; i < g.n_nodes; ++i) {
    for (int d = 0; d < cfg.dim; ++d) {
      in_vec(i, d) = (u01(rng) * 2.0 - 1.0) * init;
    }
  }

  // negative sampling table, unigram^(3/4) over walk-visited degrees
  std::vector<double> freq(g.n_nodes, 0.0);
  for (const auto& w : walks) {
    for (int v : w) freq[v] += 1.0;
  }
  std::vector<int> table;
  table.reserve(1 << 16);
  {
    double total = 0.0;
    for (double f : freq) total += std::pow(f, 0.75);
    if (total == 0.0) total = 1.0;
    for (int v = 0; v < g.n_nodes; ++v) {
      int cnt = static_cast<int>(std::pow(freq[v], 0.75) / total * (1 << 16));
      for (int c = 0; c < cnt; ++c) table.push_back(v);
    }
    if (table.empty()) table.push_back(0);
  }

  std::size_t total_centers = 0;
  for (const auto& w : walks) total_centers += w.size();
  std::size_t seen = 0;

  Eigen::RowVectorXd grad_in(cfg.dim);
  for (const auto& walk : walks) {
    for (std::size_t c = 0; c < walk.size(); ++c, ++seen) {
      double lr = cfg.lr0 *
                  std::max(1e-4, 1.0 - static_cast<double>(seen) /
                                           static_cast<double>(total_centers));
      // word2vec-style random window shrink
      int win = 1 + static_cast<int>(u01(rng) * cfg.window);
      int center = walk[c];
      std::size_t lo = c >= static_cast<std::size_t>(win) ? c - win : 0;
      std::size_t hi = std::min(walk.size() - 1, c + win);
      for (std::size_t t = lo; t <= hi; ++t) {
        if (t == c) continue;
        int context = walk[t];
        grad_in.setZero();
        // positive pair
        {
          double score = sigmoid(in_vec.row(center).dot(out_vec.row(context)));
          double gpos = lr * (1.0 - score);
          grad_in += gpos * out_vec.row(context);
          out_vec.row(context) += gpos * in_vec.row(center);
        }
        for (int k = 0; k < cfg.negatives; ++k) {
          int neg = table[static_cast<std::size_t>(u01(rng) * table.size()) %
                          table.size()];
          if (neg == context) continue;
          double score = sigmoid(in_vec.row(center).dot(out_vec.row(neg)));
          double gneg = -lr * score;
          grad_in += gneg * out_vec.row(neg);
          out_vec.row(neg) += gneg * in_vec.row(center);
        }
        in_vec.row(center) += grad_in;
      }
    }
  }

  for (int i = 0; i < g.n_nodes; ++i) {
    if (adj[i].empty()) {
      emb.isolated[i] = 1;
      in_vec.row(i).setZero();
    }
  }
  emb.vectors = std::move(in_vec);
  return emb;
}

std::vector<double> edge_dot_features(const NodeEmbedding& emb,
                                      const Graph& g) {
  if (emb.vectors.rows() != g.n_nodes) {
    throw std::invalid_argument("edge_dot_features: embedding size mismatch");
  }
  std::vector<double> out(g.num_edges());
  for (int e = 0; e < g.num_edges(); ++e) {
    out[e] = emb.vectors.row(g.edge_src[e]).dot(emb.vectors.row(g.edge_dst[e]));
  }
  return out;
}

}  // namespace edgeforge
