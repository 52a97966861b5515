#include "edgeforge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "edgeforge/louvain.hpp"
#include "edgeforge/node2vec.hpp"
#include "edgeforge/stats.hpp"

namespace edgeforge {

namespace {

std::vector<int> label_column(const Graph& g, AuxTaskSpec::Source source) {
  const std::vector<int>& labels = source == AuxTaskSpec::Source::kCommunity
                                       ? g.community_ids
                                       : g.batch_ids;
  if (labels.empty()) {
    throw std::runtime_error("auxiliary task: label column missing on graph");
  }
  return labels;
}

int count_classes(const std::vector<int>& labels) {
  int c = 0;
  for (int l : labels) {
    if (l < 0) throw std::runtime_error("labels must be non-negative");
    c = std::max(c, l + 1);
  }
  return c;
}

int auto_parts(int n, int requested) {
  if (requested > 0) return std::min(requested, n);
  return std::max(1, n / 64);
}

struct AuxModel {
  GatLayer layer1;
  GatLayer layer2;
};

AuxModel build_aux_model(ModelParams& params, const AuxTaskSpec& spec,
                         int in_dim, int n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AuxModel m;
  m.layer1 = make_gat_layer(params, "aux.gat1", in_dim, spec.hidden,
                            spec.heads, GatMode::kConcat, rng, spec.slope);
  m.layer2 =
      make_gat_layer(params, "aux.gat2", spec.hidden * spec.heads, n_classes,
                     spec.heads, GatMode::kAverage, rng, spec.slope);
  return m;
}

DiffTensor aux_forward(Tape& tape, const AuxModel& model,
                       const AuxTaskSpec& spec, const AttentionIndex& idx,
                       const Matrix& features, bool training,
                       std::mt19937_64& drop_rng,
                       AttentionRecord* record = nullptr) {
  DiffTensor h = dropout(tape.input(features), spec.dropout, training,
                         drop_rng);
  DiffTensor h1 = gat_forward(tape, model.layer1, idx, h, record);
  DiffTensor h1d = dropout(h1, spec.dropout, training, drop_rng);
  return gat_forward(tape, model.layer2, idx, h1d);
}

double masked_accuracy(const Matrix& logits, const std::vector<int>& labels,
                       const std::vector<std::uint8_t>& mask) {
  int correct = 0, total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    correct += static_cast<int>(arg) == labels[i];
    total++;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

}  // namespace

AuxResult train_auxiliary(const Graph& g, const AuxTaskSpec& spec,
                          std::uint64_t seed) {
  std::vector<int> labels = label_column(g, spec.source);
  int n_classes = count_classes(labels);
  if (n_classes < 2) {
    throw std::runtime_error(
        "auxiliary task: degenerate single-class labels");
  }
  int f = static_cast<int>(g.features.cols());

  AuxResult result;
  AuxModel model = build_aux_model(result.params, spec, f, n_classes, seed);
  AdagradState opt;
  opt.lr = spec.lr;
  opt.weight_decay = spec.weight_decay;

  // holdout for early stopping
  std::vector<int> order(g.n_nodes);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eedull);
  std::shuffle(order.begin(), order.end(), rng);
  int n_hold = std::max(1, static_cast<int>(spec.holdout_frac * g.n_nodes));
  std::vector<std::uint8_t> holdout(g.n_nodes, 0);
  for (int i = 0; i < n_hold; ++i) holdout[order[i]] = 1;

  Partition part =
      partition_graph(g, auto_parts(g.n_nodes, spec.partition_count), seed);
  AttentionIndex full_idx = build_attention_index(g);
  std::mt19937_64 drop_rng(seed ^ 0xd20ull);

  Tape tape;
  double best = std::numeric_limits<double>::infinity();
  std::map<std::string, Matrix> best_snapshot = result.params.snapshot();
  int best_epoch = -1;
  int epoch = 0;
  for (; epoch < spec.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int epoch_rows = 0;
    auto batches = minibatch_epoch(g, part, spec.batch_size,
                                   seed + 1000003ull * (epoch + 1));
    for (const Subgraph& sub : batches) {
      std::vector<int> rows;
      std::vector<int> row_labels;
      for (int i = 0; i < sub.graph.n_nodes; ++i) {
        int gi = sub.global_nodes[i];
        if (!holdout[gi]) {
          rows.push_back(i);
          row_labels.push_back(labels[gi]);
        }
      }
      if (rows.empty()) continue;
      tape.reset();
      AttentionIndex idx = build_attention_index(sub.graph);
      DiffTensor logits = aux_forward(tape, model, spec, idx,
                                      sub.graph.features, true, drop_rng);
      DiffTensor loss = nll_loss(logits, rows, row_labels);
      double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) {
        throw std::runtime_error("auxiliary training diverged at epoch " +
                                 std::to_string(epoch));
      }
      epoch_loss += lv * rows.size();
      epoch_rows += static_cast<int>(rows.size());
      result.params.zero_grad();
      tape.backward(loss);
      adagrad_step(result.params, opt);
    }
    result.train_loss.push_back(epoch_loss / std::max(1, epoch_rows));

    std::vector<int> hold_rows, hold_labels;
    for (int i = 0; i < g.n_nodes; ++i) {
      if (holdout[i]) {
        hold_rows.push_back(i);
        hold_labels.push_back(labels[i]);
      }
    }
    tape.reset();
    DiffTensor logits = aux_forward(tape, model, spec, full_idx, g.features,
                                    false, drop_rng);
    double hold_loss =
        nll_loss(logits, hold_rows, hold_labels).value()(0, 0);
    result.holdout_loss.push_back(hold_loss);
    if (hold_loss < best) {
      best = hold_loss;
      best_snapshot = result.params.snapshot();
      best_epoch = epoch;
    } else if (epoch - best_epoch >= spec.patience) {
      epoch++;
      break;
    }
  }
  result.epochs_run = epoch;
  result.params.restore(best_snapshot);

  tape.reset();
  AttentionRecord record;
  DiffTensor logits = aux_forward(tape, model, spec, full_idx, g.features,
                                  false, drop_rng, &record);
  result.holdout_accuracy =
      masked_accuracy(logits.value(), labels, holdout);
  result.edge_features = extract_edge_features(record);
  if (result.edge_features.rows() != g.num_edges()) {
    // graphs whose last edges belong to low-id nodes still need E rows
    Matrix padded = Matrix::Zero(g.num_edges(), record.heads);
    padded.topRows(result.edge_features.rows()) = result.edge_features;
    result.edge_features = padded;
  }
  tape.reset();
  return result;
}

AttentionRecord auxiliary_attention(const Graph& g, const AuxTaskSpec& spec,
                                    ModelParams& params) {
  std::vector<int> labels = label_column(g, spec.source);
  int n_classes = count_classes(labels);
  AuxModel model;
  std::mt19937_64 rng(0);
  ModelParams shaped;
  model = build_aux_model(shaped, spec, static_cast<int>(g.features.cols()),
                          n_classes, 0);
  // rebind the layer parameter pointers onto the trained values
  for (ParamTensor* p : shaped.entries()) p->value = params.at(p->name).value;
  Tape tape;
  AttentionIndex idx = build_attention_index(g);
  AttentionRecord record;
  std::mt19937_64 drop_rng(0);
  aux_forward(tape, model, spec, idx, g.features, false, drop_rng, &record);
  return record;
}

EdgeFeatureTable assemble_edge_features(const Matrix& aux_community,
                                        const Matrix& aux_batch,
                                        const CurvatureMap& curvature,
                                        const std::vector<double>& node2vec_dot,
                                        const Graph& g) {
  int e_count = g.num_edges();
  std::string missing;
  auto require_rows = [&](const Matrix& m, const char* what) {
    if (m.rows() != e_count) {
      throw std::runtime_error(std::string("assemble_edge_features: ") + what +
                               " covers " + std::to_string(m.rows()) + " of " +
                               std::to_string(e_count) + " edges");
    }
  };
  require_rows(aux_community, "community attention");
  require_rows(aux_batch, "batch attention");
  if (static_cast<int>(node2vec_dot.size()) != e_count) {
    throw std::runtime_error(
        "assemble_edge_features: node2vec covers " +
        std::to_string(node2vec_dot.size()) + " of " +
        std::to_string(e_count) + " edges");
  }
  Vector curv_col(e_count);
  for (int e = 0; e < e_count; ++e) {
    try {
      curv_col(e) = curvature.at(g.edge_src[e], g.edge_dst[e]);
    } catch (const std::out_of_range&) {
      missing += " " + std::to_string(e);
    }
  }
  if (!missing.empty()) {
    throw std::runtime_error(
        "assemble_edge_features: curvature missing for edges:" + missing);
  }

  auto standardize = [&](Vector col) {
    double m = col.mean();
    col.array() -= m;
    double var = col.squaredNorm() / std::max<Eigen::Index>(1, col.size());
    if (var > 0.0) col /= std::sqrt(var);
    return col;
  };

  EdgeFeatureTable t;
  int w1 = static_cast<int>(aux_community.cols());
  int w2 = static_cast<int>(aux_batch.cols());
  t.rows.resize(e_count, w1 + w2 + 2);
  t.rows.leftCols(w1) = aux_community;
  t.rows.middleCols(w1, w2) = aux_batch;
  t.rows.col(w1 + w2) = standardize(curv_col);
  Vector n2v = Eigen::Map<const Vector>(node2vec_dot.data(), e_count);
  t.rows.col(w1 + w2 + 1) = standardize(n2v);
  validate_edge_features(t, g, w1 + w2);
  return t;
}

EdgeFeatureTable select_edge_features(const EdgeFeatureTable& table,
                                      int aux_heads, bool use_aux_community,
                                      bool use_aux_batch, bool use_curvature,
                                      bool use_node2vec) {
  std::vector<int> cols;
  for (int c = 0; c < aux_heads; ++c) {
    if (use_aux_community) cols.push_back(c);
  }
  for (int c = 0; c < aux_heads; ++c) {
    if (use_aux_batch) cols.push_back(aux_heads + c);
  }
  if (use_curvature) cols.push_back(2 * aux_heads);
  if (use_node2vec) cols.push_back(2 * aux_heads + 1);
  EdgeFeatureTable out;
  out.rows.resize(table.rows.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out.rows.col(static_cast<Eigen::Index>(i)) = table.rows.col(cols[i]);
  }
  return out;
}

MainModelConfig main_config_from(const RunConfig& cfg) {
  MainModelConfig m;
  m.backbone = cfg.backbone;
  m.gcn_hidden = cfg.gcn_hidden;
  m.gat_hidden = cfg.gat_hidden;
  m.gat_heads = cfg.gat_heads;
  m.dropout = cfg.backbone == "gat" ? cfg.gat_dropout : cfg.gcn_dropout;
  m.slope = cfg.leaky_relu_slope;
  m.st_heads = cfg.st_heads;
  m.st_output_dim = cfg.st_output_dim;
  m.use_edge_features = cfg.use_edge_features;
  m.epochs = cfg.epochs;
  m.patience = cfg.patience;
  m.lr = cfg.lr;
  m.weight_decay = cfg.weight_decay;
  m.batch_size = cfg.batch_size;
  m.partition_count = cfg.partition_count;
  return m;
}

MainModel build_main_model(const MainModelConfig& cfg, int in_dim,
                           int n_classes, int max_degree, int table_width,
                           std::uint64_t seed) {
  MainModel model;
  model.cfg = cfg;
  model.in_dim = in_dim;
  model.n_classes = n_classes;
  model.table_width = cfg.use_edge_features ? table_width : 0;
  model.params = std::make_unique<ModelParams>();
  std::mt19937_64 rng(seed);
  if (cfg.backbone == "gcn") {
    model.gcn1 = make_gcn_layer(*model.params, "gcn1", in_dim, cfg.gcn_hidden,
                                rng);
    model.gcn2 = make_gcn_layer(*model.params, "gcn2", cfg.gcn_hidden,
                                cfg.gcn_hidden, rng);
    model.backbone_width = cfg.gcn_hidden;
  } else if (cfg.backbone == "gat") {
    model.gat1 = make_gat_layer(*model.params, "gat1", in_dim, cfg.gat_hidden,
                                cfg.gat_heads, GatMode::kConcat, rng,
                                cfg.slope);
    model.gat2 = make_gat_layer(*model.params, "gat2",
                                cfg.gat_hidden * cfg.gat_heads, cfg.gat_hidden,
                                cfg.gat_heads, GatMode::kConcat, rng,
                                cfg.slope);
    model.backbone_width = cfg.gat_hidden * cfg.gat_heads;
  } else {
    throw std::invalid_argument("build_main_model: unknown backbone " +
                                cfg.backbone);
  }
  int enhanced = model.backbone_width;
  if (model.table_width > 0) {
    SetTransformerConfig sc;
    sc.input_dim = model.table_width;
    sc.model_dim = cfg.st_output_dim;
    sc.heads = cfg.st_heads;
    sc.max_set_size = std::max(1, max_degree);
    model.stb = make_set_transformer(*model.params, "stb", sc, rng);
    enhanced += cfg.st_output_dim;
  }
  model.head =
      make_dense_layer(*model.params, "head", enhanced, n_classes, rng);
  return model;
}

DiffTensor main_forward(Tape& tape, MainModel& model, const Graph& view,
                        const std::vector<int>* edge_row_map,
                        const EdgeFeatureTable& table, bool training,
                        std::mt19937_64& dropout_rng, Matrix* set_attention) {
  DiffTensor h = dropout(tape.input(view.features), model.cfg.dropout,
                         training, dropout_rng);
  DiffTensor rep;
  if (model.cfg.backbone == "gcn") {
    auto adj = gcn_norm_adjacency(view);
    DiffTensor h1 = gcn_forward(tape, model.gcn1, adj, h, true);
    DiffTensor h1d = dropout(h1, model.cfg.dropout, training, dropout_rng);
    rep = gcn_forward(tape, model.gcn2, adj, h1d, true);
  } else {
    AttentionIndex idx = build_attention_index(view);
    DiffTensor h1 = gat_forward(tape, model.gat1, idx, h);
    DiffTensor h1d = dropout(h1, model.cfg.dropout, training, dropout_rng);
    rep = gat_forward(tape, model.gat2, idx, h1d);
  }
  if (model.table_width > 0) {
    SetBatchPlan plan =
        build_set_plan(view, model.stb.cfg.max_set_size, edge_row_map);
    DiffTensor tbl = tape.input(table.rows);
    DiffTensor enc = encode_edge_sets(tape, model.stb, tbl, plan,
                                      set_attention);
    rep = concat_cols(rep, enc);
  }
  return dense_forward(tape, model.head, rep);
}

namespace {

std::pair<std::vector<int>, std::vector<int>> masked_rows(
    const Graph& g, const std::vector<std::uint8_t>& mask) {
  std::vector<int> rows, labels;
  for (int i = 0; i < g.n_nodes; ++i) {
    if (mask.empty() || mask[i]) {
      rows.push_back(i);
      labels.push_back(g.class_ids[i]);
    }
  }
  return {rows, labels};
}

}  // namespace

SeedRunMetrics train_main(const Graph& g, const EdgeFeatureTable& table,
                          MainModel& model, std::uint64_t seed) {
  if (g.train_mask.empty() || g.val_mask.empty() || g.test_mask.empty()) {
    throw std::runtime_error("train_main: masks are required");
  }
  if (g.class_ids.empty()) {
    throw std::runtime_error("train_main: class labels are required");
  }
  SeedRunMetrics metrics;
  metrics.seed = seed;

  std::vector<int> train_nodes;
  for (int i = 0; i < g.n_nodes; ++i) {
    if (g.train_mask[i]) train_nodes.push_back(i);
  }
  if (train_nodes.empty()) {
    throw std::runtime_error("train_main: empty train mask");
  }
  Subgraph train_sub = induced_subgraph(g, train_nodes);

  Partition part = partition_graph(
      train_sub.graph,
      auto_parts(train_sub.graph.n_nodes, model.cfg.partition_count), seed);
  int batches_per_epoch =
      (part.parts + model.cfg.batch_size - 1) / model.cfg.batch_size;

  AdagradState opt;
  opt.lr = model.cfg.lr;
  opt.weight_decay = model.cfg.weight_decay;
  std::mt19937_64 drop_rng(seed ^ 0xd2011ull);

  auto [val_rows, val_labels] = masked_rows(g, g.val_mask);
  if (val_rows.empty()) {
    throw std::runtime_error("train_main: empty validation mask");
  }

  Tape tape;
  double best = std::numeric_limits<double>::infinity();
  std::map<std::string, Matrix> best_snapshot = model.params->snapshot();
  int best_epoch = -1;
  int epoch = 0;

  // with a single mini-batch per epoch the merged subgraph is the whole
  // train subgraph; build it once
  std::vector<Subgraph> fixed_batch;
  if (batches_per_epoch == 1) {
    fixed_batch = minibatch_epoch(train_sub.graph, part,
                                  model.cfg.batch_size, seed);
  }

  for (; epoch < model.cfg.epochs; ++epoch) {
    std::vector<Subgraph> shuffled;
    if (batches_per_epoch != 1) {
      shuffled = minibatch_epoch(train_sub.graph, part, model.cfg.batch_size,
                                 seed + 1000003ull * (epoch + 1));
    }
    const std::vector<Subgraph>& epoch_batches =
        batches_per_epoch == 1 ? fixed_batch : shuffled;

    double epoch_loss = 0.0;
    int epoch_rows = 0;
    for (const Subgraph& sub : epoch_batches) {
      std::vector<int> rows(sub.graph.n_nodes);
      std::iota(rows.begin(), rows.end(), 0);
      std::vector<int> row_labels(sub.graph.n_nodes);
      for (int i = 0; i < sub.graph.n_nodes; ++i) {
        row_labels[i] = sub.graph.class_ids[i];
      }
      // table rows are keyed by full-graph edges: compose the two maps
      std::vector<int> edge_map(sub.graph.num_edges());
      for (int e = 0; e < sub.graph.num_edges(); ++e) {
        edge_map[e] = train_sub.global_edges[sub.global_edges[e]];
      }
      tape.reset();
      DiffTensor logits = main_forward(tape, model, sub.graph, &edge_map,
                                       table, true, drop_rng);
      DiffTensor loss = nll_loss(logits, rows, row_labels);
      double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train_main: loss diverged at epoch " +
                                 std::to_string(epoch));
      }
      epoch_loss += lv * rows.size();
      epoch_rows += static_cast<int>(rows.size());
      model.params->zero_grad();
      tape.backward(loss);
      adagrad_step(*model.params, opt);
    }
    metrics.train_loss.push_back(epoch_loss / std::max(1, epoch_rows));

    tape.reset();
    DiffTensor logits =
        main_forward(tape, model, g, nullptr, table, false, drop_rng);
    double val_loss = nll_loss(logits, val_rows, val_labels).value()(0, 0);
    if (!std::isfinite(val_loss)) {
      throw std::runtime_error("train_main: validation loss diverged at epoch " +
                               std::to_string(epoch));
    }
    metrics.val_loss.push_back(val_loss);
    if (val_loss < best) {
      best = val_loss;
      best_snapshot = model.params->snapshot();
      best_epoch = epoch;
    } else if (epoch - best_epoch >= model.cfg.patience) {
      epoch++;
      break;
    }
  }
  metrics.epochs_run = epoch;
  metrics.best_epoch = best_epoch;
  metrics.best_val_loss = best;
  model.params->restore(best_snapshot);
  tape.reset();
  metrics.test_accuracy = test_accuracy(model, g, table);
  return metrics;
}

double test_accuracy(MainModel& model, const Graph& g,
                     const EdgeFeatureTable& table) {
  Tape tape;
  std::mt19937_64 rng(0);
  DiffTensor logits = main_forward(tape, model, g, nullptr, table, false, rng);
  return masked_accuracy(logits.value(), g.class_ids, g.test_mask);
}

RunReport evaluate_runs(const Graph& g, const EdgeFeatureTable& table,
                        const MainModelConfig& cfg,
                        const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) {
    throw std::invalid_argument("evaluate_runs: need >= 2 seeds for the CI");
  }
  auto t0 = std::chrono::steady_clock::now();
  int n_classes = count_classes(g.class_ids);
  int max_degree = g.max_out_degree();
  int width = static_cast<int>(table.rows.cols());

  RunReport report;
  report.runs.resize(seeds.size());
  int workers = std::min<int>(env_thread_cap(1),
                              static_cast<int>(seeds.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= seeds.size()) break;
      MainModel model =
          build_main_model(cfg, static_cast<int>(g.features.cols()),
                           n_classes, max_degree, width, seeds[i]);
      report.runs[i] = train_main(g, table, model, seeds[i]);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  std::vector<double> accs = report.accuracies();
  report.mean_accuracy = mean(accs);
  auto [lo, hi] = confidence_interval95(accs);
  report.ci_lo = lo;
  report.ci_hi = hi;
  report.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

void attach_welch(RunReport& ours, const RunReport& baseline) {
  WelchResult w = welch_ttest(ours.accuracies(), baseline.accuracies());
  ours.has_welch = true;
  ours.welch_t = w.t;
  ours.welch_dof = w.dof;
  ours.welch_p = w.p;
}

EdgeFeatureBundle build_edge_features(Graph& g, const RunConfig& cfg,
                                      std::uint64_t seed) {
  EdgeFeatureBundle bundle;
  CommunityAssignment ca = louvain(g, seed, cfg.louvain_resolution);
  g.community_ids = ca.community;

  AuxTaskSpec aux;
  aux.heads = cfg.gat_heads;
  aux.hidden = cfg.gat_hidden;
  aux.epochs = cfg.epochs;
  aux.patience = cfg.patience;
  aux.dropout = cfg.gat_dropout;
  aux.lr = cfg.lr;
  aux.weight_decay = cfg.weight_decay;
  aux.slope = cfg.leaky_relu_slope;
  aux.holdout_frac = cfg.aux_holdout;
  aux.batch_size = cfg.batch_size;
  aux.partition_count = cfg.partition_count;

  aux.source = AuxTaskSpec::Source::kCommunity;
  AuxResult aux1 = train_auxiliary(g, aux, seed + 1);
  bundle.aux_community = aux1.edge_features;
  bundle.aux_community_accuracy = aux1.holdout_accuracy;

  aux.source = AuxTaskSpec::Source::kBatch;
  AuxResult aux2 = train_auxiliary(g, aux, seed + 2);
  bundle.aux_batch = aux2.edge_features;
  bundle.aux_batch_accuracy = aux2.holdout_accuracy;

  bundle.curvature = forman_ricci(g);

  Node2VecConfig n2v;
  n2v.dim = cfg.n2v_dim;
  n2v.p = cfg.n2v_p;
  n2v.q = cfg.n2v_q;
  n2v.walk_len = cfg.n2v_walk_len;
  n2v.walks_per_node = cfg.n2v_walks;
  n2v.window = cfg.n2v_window;
  n2v.negatives = cfg.n2v_negatives;
  NodeEmbedding emb = node2vec_embed(g, n2v, seed + 3);
  bundle.node2vec_dot = edge_dot_features(emb, g);

  bundle.table = assemble_edge_features(bundle.aux_community, bundle.aux_batch,
                                        bundle.curvature, bundle.node2vec_dot,
                                        g);
  return bundle;
}

}  // namespace edgeforge
