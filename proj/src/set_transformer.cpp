#include "edgeforge/set_transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace edgeforge {

SetTransformerBlock make_set_transformer(ModelParams& params,
                                         const std::string& prefix,
                                         const SetTransformerConfig& cfg,
                                         std::mt19937_64& rng) {
  if (cfg.heads < 1 || cfg.model_dim % cfg.heads != 0) {
    throw std::invalid_argument(
        "set_transformer: model_dim must be divisible by heads");
  }
  if (cfg.max_set_size < 1) {
    throw std::invalid_argument("set_transformer: max_set_size must be >= 1");
  }
  int d = cfg.model_dim;
  int dh = d / cfg.heads;
  SetTransformerBlock b;
  b.cfg = cfg;
  b.lift_w = &params.add(
      prefix + ".lift.W",
      glorot_uniform(cfg.input_dim, d, cfg.input_dim, d, rng));
  b.lift_b = &params.add(prefix + ".lift.b", Matrix::Zero(1, d));
  for (int h = 0; h < cfg.heads; ++h) {
    std::string hp = prefix + ".head" + std::to_string(h);
    b.w_q.push_back(&params.add(hp + ".Wq", glorot_uniform(d, dh, d, dh, rng)));
    b.w_k.push_back(&params.add(hp + ".Wk", glorot_uniform(d, dh, d, dh, rng)));
    b.w_v.push_back(&params.add(hp + ".Wv", glorot_uniform(d, dh, d, dh, rng)));
  }
  b.w_o = &params.add(prefix + ".Wo", glorot_uniform(d, d, d, d, rng));
  b.ff_w1 = &params.add(prefix + ".ff.W1", glorot_uniform(d, d, d, d, rng));
  b.ff_b1 = &params.add(prefix + ".ff.b1", Matrix::Zero(1, d));
  b.ff_w2 = &params.add(prefix + ".ff.W2", glorot_uniform(d, d, d, d, rng));
  b.ff_b2 = &params.add(prefix + ".ff.b2", Matrix::Zero(1, d));
  b.ln1_g = &params.add(prefix + ".ln1.g", Matrix::Ones(1, d));
  b.ln1_b = &params.add(prefix + ".ln1.b", Matrix::Zero(1, d));
  b.ln2_g = &params.add(prefix + ".ln2.g", Matrix::Ones(1, d));
  b.ln2_b = &params.add(prefix + ".ln2.b", Matrix::Zero(1, d));
  b.lambda = &params.add(
      prefix + ".lambda",
      Matrix::Constant(cfg.max_set_size, 1, 1.0 / cfg.max_set_size));
  return b;
}

DiffTensor multihead(Tape& tape, const SetTransformerBlock& block,
                     DiffTensor q, DiffTensor k, DiffTensor v,
                     int rows_per_block,
                     const std::vector<std::uint8_t>& key_mask, Matrix* attn) {
  int d = block.cfg.model_dim;
  if (q.cols() != d || k.cols() != d || v.cols() != d) {
    throw std::invalid_argument("multihead: inputs must have width " +
                                std::to_string(d));
  }
  if (k.rows() != v.rows()) {
    throw std::invalid_argument("multihead: key/value row counts differ");
  }
  int dh = d / block.cfg.heads;
  double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  DiffTensor combined;
  Matrix head_attn;
  for (int h = 0; h < block.cfg.heads; ++h) {
    DiffTensor qh = matmul(q, tape.param(*block.w_q[h]));
    DiffTensor kh = matmul(k, tape.param(*block.w_k[h]));
    DiffTensor vh = matmul(v, tape.param(*block.w_v[h]));
    DiffTensor oh = block_sdpa(qh, kh, vh, rows_per_block, key_mask, scl,
                               attn != nullptr ? &head_attn : nullptr);
    if (attn != nullptr) {
      if (h == 0) {
        *attn = head_attn / block.cfg.heads;
      } else {
        *attn += head_attn / block.cfg.heads;
      }
    }
    combined = h == 0 ? oh : concat_cols(combined, oh);
  }
  return matmul(combined, tape.param(*block.w_o));
}

DiffTensor stb_forward(Tape& tape, const SetTransformerBlock& block,
                       DiffTensor s, int rows_per_block,
                       const std::vector<std::uint8_t>& key_mask,
                       Matrix* attn) {
  int d = block.cfg.model_dim;
  DiffTensor x0;
  if (s.cols() == block.cfg.input_dim && block.cfg.input_dim != d) {
    x0 = add_rowvec(matmul(s, tape.param(*block.lift_w)),
                    tape.param(*block.lift_b));
  } else if (s.cols() == d) {
    x0 = s;
  } else {
    throw std::invalid_argument("stb_forward: width " +
                                std::to_string(s.cols()) +
                                " matches neither input nor model dim");
  }
  DiffTensor att = multihead(tape, block, x0, x0, x0, rows_per_block, key_mask,
                             attn);
  DiffTensor x = layer_norm(add(x0, att), tape.param(*block.ln1_g),
                            tape.param(*block.ln1_b));
  DiffTensor hidden = relu(
      add_rowvec(matmul(x, tape.param(*block.ff_w1)), tape.param(*block.ff_b1)));
  DiffTensor ff = add_rowvec(matmul(hidden, tape.param(*block.ff_w2)),
                             tape.param(*block.ff_b2));
  return layer_norm(add(x, ff), tape.param(*block.ln2_g),
                    tape.param(*block.ln2_b));
}

DiffTensor pool_set(Tape& tape, const SetTransformerBlock& block,
                    DiffTensor rows_out, int rows_per_block,
                    const std::vector<std::uint8_t>& pool_mask) {
  if (rows_per_block != block.cfg.max_set_size) {
    throw std::invalid_argument(
        "pool_set: block layout does not match pooling length");
  }
  return segment_weighted_sum(rows_out, tape.param(*block.lambda),
                              rows_per_block, pool_mask);
}

SetBatchPlan build_set_plan(const Graph& g, int m,
                            const std::vector<int>* edge_row_map) {
  SetBatchPlan plan;
  plan.n_sets = g.n_nodes;
  plan.m = m;
  plan.gather_idx.assign(static_cast<std::size_t>(g.n_nodes) * m, -1);
  plan.attn_mask.assign(plan.gather_idx.size(), 0);
  plan.pool_mask.assign(plan.gather_idx.size(), 0);
  plan.isolated.assign(g.n_nodes, 0);
  for (int i = 0; i < g.n_nodes; ++i) {
    int deg = g.out_degree(i);
    if (deg > m) {
      throw std::runtime_error("set plan: node " + std::to_string(i) +
                               " has degree " + std::to_string(deg) +
                               " exceeding max set size " + std::to_string(m));
    }
    if (deg == 0) {
      plan.isolated[i] = 1;
      plan.attn_mask[static_cast<std::size_t>(i) * m] = 1;  // dummy key
      continue;
    }
    for (int r = 0; r < deg; ++r) {
      int e = g.csr_offsets[i] + r;  // ascending dst: canonical order
      std::size_t slot = static_cast<std::size_t>(i) * m + r;
      plan.gather_idx[slot] = edge_row_map ? (*edge_row_map)[e] : e;
      plan.attn_mask[slot] = 1;
      plan.pool_mask[slot] = 1;
    }
  }
  return plan;
}

DiffTensor encode_edge_sets(Tape& tape, const SetTransformerBlock& block,
                            DiffTensor table, const SetBatchPlan& plan,
                            Matrix* attn) {
  DiffTensor s = gather_rows(table, plan.gather_idx);
  DiffTensor out = stb_forward(tape, block, s, plan.m, plan.attn_mask, attn);
  return pool_set(tape, block, out, plan.m, plan.pool_mask);
}

Vector encode_edge_set(Tape& tape, const SetTransformerBlock& block,
                       const EdgeFeatureTable& table, const Graph& g, int i) {
  if (i < 0 || i >= g.n_nodes) {
    throw std::out_of_range("encode_edge_set: node out of range");
  }
  SetBatchPlan plan;
  plan.n_sets = 1;
  plan.m = block.cfg.max_set_size;
  plan.gather_idx.assign(plan.m, -1);
  plan.attn_mask.assign(plan.m, 0);
  plan.pool_mask.assign(plan.m, 0);
  plan.isolated.assign(1, 0);
  int deg = g.out_degree(i);
  if (deg > plan.m) {
    throw std::runtime_error("encode_edge_set: degree exceeds max set size");
  }
  if (deg == 0) {
    plan.isolated[0] = 1;
    plan.attn_mask[0] = 1;
  } else {
    for (int r = 0; r < deg; ++r) {
      plan.gather_idx[r] = g.csr_offsets[i] + r;
      plan.attn_mask[r] = 1;
      plan.pool_mask[r] = 1;
    }
  }
  DiffTensor t = tape.input(table.rows);
  DiffTensor enc = encode_edge_sets(tape, block, t, plan);
  return enc.value().row(0);
}

}  // namespace edgeforge
