#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "edgeforge/tensor.hpp"

namespace edgeforge {

/// Immutable directed graph with CSR indexing by source, node features and
/// optional labels/masks. Edges are kept sorted by (src, dst); edge ids are
/// positions in that order. Self-loops are rejected (layers add their own).
struct Graph {
  int n_nodes = 0;
  std::vector<int> edge_src;
  std::vector<int> edge_dst;
  std::vector<double> edge_weight;
  std::vector<int> csr_offsets;  // size n_nodes + 1

  Matrix features;  // n_nodes x F, may be 0x0

  std::vector<int> batch_ids;      // empty when absent
  std::vector<int> community_ids;  // empty when absent
  std::vector<int> class_ids;      // empty when absent

  std::vector<std::uint8_t> train_mask;
  std::vector<std::uint8_t> val_mask;
  std::vector<std::uint8_t> test_mask;

  int num_edges() const { return static_cast<int>(edge_src.size()); }
  int out_degree(int i) const { return csr_offsets[i + 1] - csr_offsets[i]; }
  int max_out_degree() const;
  /// Edge id of (src, dst), or -1.
  int find_edge(int src, int dst) const;
};

using EdgeTriple = std::tuple<int, int, double>;  // (src, dst, weight)

/// Builds a graph from an unsorted edge list; sorts, indexes and validates.
Graph make_graph(int n_nodes, std::vector<EdgeTriple> edges,
                 Matrix features = Matrix());

/// Checks all structural invariants; throws std::runtime_error on violation.
void validate_graph(const Graph& g);

/// Out-neighbors of node i as (neighbor, edge-id), ascending by neighbor id.
std::vector<std::pair<int, int>> neighborhood(const Graph& g, int i);

/// Adds the reverse of every edge that lacks one (weight copied).
Graph symmetrized(const Graph& g);

/// Per-directed-edge feature rows, aligned with Graph edge ids.
/// Schema: [aux-task-1 heads | aux-task-2 heads | Forman-Ricci | node2vec].
struct EdgeFeatureTable {
  Matrix rows;  // num_edges x width
  int width() const { return static_cast<int>(rows.cols()); }
};

/// Checks table/graph agreement and that attention columns lie in [0, 1].
void validate_edge_features(const EdgeFeatureTable& t, const Graph& g,
                            int attention_cols);

/// Assignment of every node to one of `parts` subgraphs.
struct Partition {
  int parts = 0;
  std::vector<int> assignment;
  std::vector<int> part_size() const;
};

/// Greedy edge-cut-minimizing multilevel partitioner. Parts are non-empty
/// and balanced within +-20% of n/p; deterministic under seed.
Partition partition_graph(const Graph& g, int parts, std::uint64_t seed);

/// Induced subgraph with node ids remapped to 0..k-1 (ascending global id).
/// Keeps every edge whose endpoints are both selected and records the
/// original node and edge ids.
struct Subgraph {
  Graph graph;
  std::vector<int> global_nodes;  // local node -> global node
  std::vector<int> global_edges;  // local edge -> global edge
};

Subgraph induced_subgraph(const Graph& g, const std::vector<int>& nodes);

/// One epoch of cluster mini-batches: parts are shuffled under `seed`,
/// grouped `batch_size` at a time, and each group merged into one induced
/// subgraph (inter-part edges among selected parts included). Every part
/// appears exactly once.
std::vector<Subgraph> minibatch_epoch(const Graph& g, const Partition& part,
                                      int batch_size, std::uint64_t seed);

}  // namespace edgeforge
