#include "edgeforge/layers.hpp"

#include <algorithm>
#include <stdexcept>

namespace edgeforge {

AttentionIndex build_attention_index(const Graph& g) {
  AttentionIndex idx;
  idx.offsets.reserve(g.n_nodes + 1);
  idx.offsets.push_back(0);
  for (int i = 0; i < g.n_nodes; ++i) {
    bool self_placed = false;
    for (int e = g.csr_offsets[i]; e < g.csr_offsets[i + 1]; ++e) {
      int j = g.edge_dst[e];
      if (!self_placed && i < j) {
        idx.att_src.push_back(i);
        idx.att_dst.push_back(i);
        idx.edge_id.push_back(-1);
        self_placed = true;
      }
      idx.att_src.push_back(i);
      idx.att_dst.push_back(j);
      idx.edge_id.push_back(e);
    }
    if (!self_placed) {
      idx.att_src.push_back(i);
      idx.att_dst.push_back(i);
      idx.edge_id.push_back(-1);
    }
    idx.offsets.push_back(static_cast<int>(idx.att_src.size()));
  }
  return idx;
}

GatLayer make_gat_layer(ModelParams& params, const std::string& prefix,
                        int in_dim, int out_dim, int heads, GatMode mode,
                        std::mt19937_64& rng, double slope) {
  if (heads < 1) throw std::invalid_argument("gat: heads must be >= 1");
  GatLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.heads = heads;
  layer.mode = mode;
  layer.slope = slope;
  for (int l = 0; l < heads; ++l) {
    std::string h = prefix + ".head" + std::to_string(l);
    layer.w.push_back(&params.add(
        h + ".W", glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng)));
    layer.a_src.push_back(&params.add(
        h + ".a_src", glorot_uniform(out_dim, 1, 2 * out_dim, 1, rng)));
    layer.a_dst.push_back(&params.add(
        h + ".a_dst", glorot_uniform(out_dim, 1, 2 * out_dim, 1, rng)));
  }
  return layer;
}

DiffTensor gat_forward(Tape& tape, const GatLayer& layer,
                       const AttentionIndex& index, DiffTensor h,
                       AttentionRecord* record) {
  if (h.cols() != layer.in_dim) {
    throw std::invalid_argument("gat_forward: feature width " +
                                std::to_string(h.cols()) + " != layer input " +
                                std::to_string(layer.in_dim));
  }
  if (record != nullptr) {
    record->heads = layer.heads;
    record->att_src = index.att_src;
    record->att_dst = index.att_dst;
    record->edge_id = index.edge_id;
    record->offsets = index.offsets;
    record->alpha.resize(static_cast<Eigen::Index>(index.att_src.size()),
                         layer.heads);
  }
  DiffTensor combined;
  for (int l = 0; l < layer.heads; ++l) {
    DiffTensor m = matmul(h, tape.param(*layer.w[l]));
    DiffTensor s_src = matmul(m, tape.param(*layer.a_src[l]));
    DiffTensor s_dst = matmul(m, tape.param(*layer.a_dst[l]));
    DiffTensor e = leaky_relu(add(gather_rows(s_src, index.att_src),
                                  gather_rows(s_dst, index.att_dst)),
                              layer.slope);
    DiffTensor alpha = segment_softmax(e, index.offsets);
    if (record != nullptr) record->alpha.col(l) = alpha.value().col(0);
    DiffTensor msgs = mul_colvec(gather_rows(m, index.att_dst), alpha);
    DiffTensor head_out = segment_sum_rows(msgs, index.offsets);
    if (l == 0) {
      combined = head_out;
    } else if (layer.mode == GatMode::kConcat) {
      combined = concat_cols(combined, head_out);
    } else {
      combined = add(combined, head_out);
    }
  }
  if (layer.mode == GatMode::kConcat) return elu(combined);
  return scale(combined, 1.0 / layer.heads);
}

Matrix extract_edge_features(const AttentionRecord& record) {
  int n_edges = 0;
  for (int e : record.edge_id) n_edges = std::max(n_edges, e + 1);
  Matrix lambda = Matrix::Zero(n_edges, record.heads);
  for (std::size_t r = 0; r < record.edge_id.size(); ++r) {
    if (record.edge_id[r] >= 0) {
      lambda.row(record.edge_id[r]) =
          record.alpha.row(static_cast<Eigen::Index>(r));
    }
  }
  return lambda;
}

GcnLayer make_gcn_layer(ModelParams& params, const std::string& prefix,
                        int in_dim, int out_dim, std::mt19937_64& rng) {
  GcnLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.w = &params.add(prefix + ".W",
                        glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng));
  layer.b = &params.add(prefix + ".b", Matrix::Zero(1, out_dim));
  return layer;
}

std::shared_ptr<const SparseOp> gcn_norm_adjacency(const Graph& g) {
  std::vector<double> inv_sqrt_deg(g.n_nodes);
  for (int i = 0; i < g.n_nodes; ++i) {
    inv_sqrt_deg[i] = 1.0 / std::sqrt(1.0 + g.out_degree(i));
  }
  std::vector<std::tuple<int, int, double>> triplets;
  triplets.reserve(g.num_edges() + g.n_nodes);
  for (int i = 0; i < g.n_nodes; ++i) {
    triplets.emplace_back(i, i, inv_sqrt_deg[i] * inv_sqrt_deg[i]);
  }
  for (int e = 0; e < g.num_edges(); ++e) {
    triplets.emplace_back(g.edge_src[e], g.edge_dst[e],
                          inv_sqrt_deg[g.edge_src[e]] *
                              inv_sqrt_deg[g.edge_dst[e]]);
  }
  return std::make_shared<const SparseOp>(
      SparseOp::from_triplets(g.n_nodes, g.n_nodes, std::move(triplets)));
}

DiffTensor gcn_forward(Tape& tape, const GcnLayer& layer,
                       const std::shared_ptr<const SparseOp>& adj,
                       DiffTensor h, bool apply_relu) {
  if (h.cols() != layer.in_dim) {
    throw std::invalid_argument("gcn_forward: feature width " +
                                std::to_string(h.cols()) + " != layer input " +
                                std::to_string(layer.in_dim));
  }
  DiffTensor y = add_rowvec(spmm(adj, matmul(h, tape.param(*layer.w))),
                            tape.param(*layer.b));
  return apply_relu ? relu(y) : y;
}

DenseLayer make_dense_layer(ModelParams& params, const std::string& prefix,
                            int in_dim, int out_dim, std::mt19937_64& rng) {
  DenseLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.w = &params.add(prefix + ".W",
                        glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng));
  layer.b = &params.add(prefix + ".b", Matrix::Zero(1, out_dim));
  return layer;
}

DiffTensor dense_forward(Tape& tape, const DenseLayer& layer, DiffTensor h) {
  return add_rowvec(matmul(h, tape.param(*layer.w)), tape.param(*layer.b));
}

}  // namespace edgeforge
