#include "edgeforge/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace edgeforge {

SaliencyReport gene_saliency(const MainModel& model, int top_k) {
  if (model.cfg.backbone != "gat") {
    throw std::runtime_error(
        "gene_saliency: unsupported backbone (defined for GAT weights)");
  }
  SaliencyReport report;
  report.top_k = top_k;
  for (const ParamTensor* w : model.gat1.w) {
    Vector norms(w->value.rows());
    for (Eigen::Index f = 0; f < w->value.rows(); ++f) {
      norms(f) = w->value.row(f).norm();
    }
    double lo = norms.minCoeff(), hi = norms.maxCoeff();
    Vector scaled;
    if (hi > lo) {
      scaled = ((norms.array() - lo) / (hi - lo)).matrix();
    } else {
      scaled = hi > 0.0 ? Vector::Ones(norms.size()).eval()
                        : Vector::Zero(norms.size()).eval();
    }
    std::vector<std::pair<int, double>> ranked;
    for (Eigen::Index f = 0; f < scaled.size(); ++f) {
      ranked.emplace_back(static_cast<int>(f), scaled(f));
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) {
                       return a.second > b.second;  // ties keep index order
                     });
    if (static_cast<int>(ranked.size()) > top_k) ranked.resize(top_k);
    report.per_head.push_back(std::move(ranked));
  }
  return report;
}

Vector edge_feature_importance(const MainModel& model) {
  if (model.table_width == 0) {
    throw std::runtime_error(
        "edge_feature_importance: model has no set transformer");
  }
  const Matrix& lift = model.stb.lift_w->value;  // table_width x d
  Vector importance = Vector::Zero(lift.rows());
  for (const ParamTensor* wq : model.stb.w_q) {
    Matrix through = lift * wq->value;  // table_width x d/h
    importance += through.cwiseAbs().rowwise().mean();
  }
  importance /= static_cast<double>(model.stb.w_q.size());
  double total = importance.sum();
  if (total <= 0.0) {
    return Vector::Constant(lift.rows(), 1.0 / lift.rows());
  }
  return importance / total;
}

std::vector<double> set_attention_mass(MainModel& model, const Graph& g,
                                       const EdgeFeatureTable& table) {
  if (model.table_width == 0) {
    throw std::runtime_error("set_attention_mass: model has no set transformer");
  }
  Tape tape;
  std::mt19937_64 rng(0);
  Matrix attn;
  main_forward(tape, model, g, nullptr, table, false, rng, &attn);
  int m = model.stb.cfg.max_set_size;
  SetBatchPlan plan = build_set_plan(g, m);
  std::vector<double> mass(g.num_edges(), 0.0);
  for (int b = 0; b < plan.n_sets; ++b) {
    int deg = g.out_degree(b);
    if (deg == 0) continue;
    for (int r = 0; r < deg; ++r) {
      double avg = 0.0;
      for (int q = 0; q < deg; ++q) {
        avg += attn(static_cast<Eigen::Index>(b) * m + q, r);
      }
      mass[plan.slot_row(b, r)] = avg / deg;
    }
  }
  return mass;
}

AttentionGraph attention_graph(MainModel& model, const Graph& g,
                               const EdgeFeatureTable& table,
                               std::uint64_t seed, double louvain_resolution) {
  std::vector<double> mass = set_attention_mass(model, g, table);
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  for (int e = 0; e < g.num_edges(); ++e) {
    std::pair<int, int> key{std::min(g.edge_src[e], g.edge_dst[e]),
                            std::max(g.edge_src[e], g.edge_dst[e])};
    auto& slot = acc[key];
    slot.first += mass[e];
    slot.second += 1;
  }
  AttentionGraph out;
  std::vector<std::tuple<int, int, double>> und;
  out.edges.reserve(acc.size());
  out.weights.reserve(acc.size());
  for (const auto& [key, val] : acc) {
    double w = val.first / val.second;
    out.edges.push_back(key);
    out.weights.push_back(w);
    und.emplace_back(key.first, key.second, w);
  }
  out.communities = louvain_edges(g.n_nodes, und, seed, louvain_resolution);
  return out;
}

}  // namespace edgeforge
