#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "edgeforge/louvain.hpp"
#include "edgeforge/pipeline.hpp"
#include "edgeforge/preprocess.hpp"
#include "edgeforge/stats.hpp"
#include "edgeforge/synth.hpp"

using namespace edgeforge;

namespace {

// Small two-block dataset with a BB-kNN graph, Louvain communities and
// class labels, ready for both auxiliary and main training.
Graph small_dataset(int per_block, std::uint64_t seed,
                    bool planted_labels = false) {
  SbmSpec spec;
  spec.block_sizes = {per_block, per_block};
  spec.block_means = Matrix::Zero(2, 6);
  spec.block_means(0, 0) = 2.0;
  spec.block_means(1, 1) = 2.0;
  spec.noise_sigma = 0.45;
  spec.n_batches = 2;
  spec.batch_shifts = Matrix::Zero(2, 6);
  spec.batch_shifts(1, 2) = 0.8;
  spec.seed = seed;
  SynthData data = generate(spec);
  Graph g = make_graph(2 * per_block,
                       bbknn_edges(data.features, data.batch_ids, 3),
                       data.features);
  g.batch_ids = data.batch_ids;
  g.community_ids = louvain(g, seed).community;
  g.class_ids = planted_labels
                    ? plant_edge_signal(g, data.block_ids, 0.05, seed + 9)
                    : data.block_ids;
  SplitMasks masks = random_split(g.n_nodes, 0.6, 0.2, seed + 1);
  g.train_mask = masks.train;
  g.val_mask = masks.val;
  g.test_mask = masks.test;
  return g;
}

AuxTaskSpec fast_aux() {
  AuxTaskSpec spec;
  spec.heads = 8;
  spec.hidden = 8;
  spec.epochs = 200;
  spec.patience = 30;
  spec.dropout = 0.5;
  return spec;
}

MainModelConfig fast_main(const std::string& backbone, bool edges) {
  MainModelConfig cfg;
  cfg.backbone = backbone;
  cfg.gcn_hidden = 16;
  cfg.gat_hidden = 4;
  cfg.gat_heads = 4;
  cfg.dropout = backbone == "gat" ? 0.5 : 0.4;
  cfg.use_edge_features = edges;
  cfg.epochs = 60;
  cfg.patience = 15;
  return cfg;
}

EdgeFeatureTable random_table(const Graph& g, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  EdgeFeatureTable t;
  t.rows.resize(g.num_edges(), width);
  for (int c = 0; c < width; ++c) {
    for (int r = 0; r < g.num_edges(); ++r) t.rows(r, c) = n(rng);
  }
  return t;
}

}  // namespace

TEST_CASE("auxiliary training learns communities on a 2-block graph") {
  Graph g = small_dataset(30, 7);
  AuxTaskSpec spec = fast_aux();
  spec.source = AuxTaskSpec::Source::kCommunity;
  AuxResult res = train_auxiliary(g, spec, 3);

  CHECK(res.epochs_run <= 200);
  CHECK(res.holdout_accuracy > 0.9);
  CHECK(res.edge_features.cols() == 8);
  CHECK(res.edge_features.rows() == g.num_edges());
  CHECK(res.edge_features.minCoeff() >= 0.0);
  CHECK(res.edge_features.maxCoeff() <= 1.0);
}

TEST_CASE("auxiliary attention conserves softmax mass per node and head") {
  Graph g = small_dataset(20, 11);
  AuxTaskSpec spec = fast_aux();
  spec.epochs = 30;
  AuxResult res = train_auxiliary(g, spec, 5);
  AttentionRecord rec = auxiliary_attention(g, spec, res.params);
  for (int i = 0; i < g.n_nodes; ++i) {
    for (int l = 0; l < rec.heads; ++l) {
      double sum = 0.0;
      for (int r = rec.offsets[i]; r < rec.offsets[i + 1]; ++r) {
        sum += rec.alpha(r, l);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("auxiliary task rejects single-class labels") {
  Graph g = small_dataset(10, 2);
  g.community_ids.assign(g.n_nodes, 0);
  AuxTaskSpec spec = fast_aux();
  CHECK_THROWS_WITH_AS(train_auxiliary(g, spec, 1),
                       "auxiliary task: degenerate single-class labels",
                       std::runtime_error);
}

TEST_CASE("assemble_edge_features builds the 18-wide schema") {
  Graph g = small_dataset(15, 3);
  std::mt19937_64 rng(1);
  Matrix aux1 = (Matrix::Random(g.num_edges(), 8).array() + 1.0) / 2.0;
  Matrix aux2 = (Matrix::Random(g.num_edges(), 8).array() + 1.0) / 2.0;
  CurvatureMap curv = forman_ricci(g);
  std::vector<double> dots(g.num_edges());
  for (int e = 0; e < g.num_edges(); ++e) dots[e] = 0.01 * e - 1.0;

  EdgeFeatureTable t = assemble_edge_features(aux1, aux2, curv, dots, g);
  CHECK(t.width() == 18);
  CHECK(t.rows.rows() == g.num_edges());
  // attention columns raw
  CHECK(t.rows.leftCols(8) == aux1);
  CHECK(t.rows.middleCols(8, 8) == aux2);
  // standardized columns: mean 0, population variance 1
  for (int c : {16, 17}) {
    double mean_c = t.rows.col(c).mean();
    double var_c = (t.rows.col(c).array() - mean_c).square().mean();
    CHECK(std::abs(mean_c) < 1e-9);
    CHECK(var_c == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("coverage gap lists missing edges") {
    std::vector<double> short_dots(g.num_edges() - 1);
    CHECK_THROWS_AS(assemble_edge_features(aux1, aux2, curv, short_dots, g),
                    std::runtime_error);
  }
  SUBCASE("column subset for ablations") {
    EdgeFeatureTable sub = select_edge_features(t, 8, true, false, false, true);
    CHECK(sub.width() == 9);
    CHECK(sub.rows.col(8) == t.rows.col(17));
  }
}

TEST_CASE("main model structure") {
  SUBCASE("baseline head consumes exactly the backbone width") {
    MainModel m = build_main_model(fast_main("gcn", false), 6, 2, 5, 18, 1);
    CHECK(m.head.in_dim == 16);
    CHECK(m.table_width == 0);
    CHECK_FALSE(m.params->contains("stb.lift.W"));
  }
  SUBCASE("edge-feature head consumes backbone width + 8") {
    MainModelConfig cfg = fast_main("gcn", true);
    cfg.st_output_dim = 8;
    MainModel m = build_main_model(cfg, 6, 2, 5, 18, 1);
    CHECK(m.head.in_dim == 16 + 8);
    CHECK(m.params->contains("stb.lift.W"));
    CHECK(m.stb.cfg.input_dim == 18);
  }
}

TEST_CASE("train_main records curves, early-stops and restores the best") {
  Graph g = small_dataset(25, 13);
  EdgeFeatureTable table = random_table(g, 0, 0);
  MainModel model = build_main_model(fast_main("gcn", false),
                                     static_cast<int>(g.features.cols()), 2,
                                     g.max_out_degree(), 0, 17);
  SeedRunMetrics m = train_main(g, table, model, 17);
  CHECK(m.epochs_run >= 1);
  CHECK(m.epochs_run <= 60);
  CHECK(static_cast<int>(m.val_loss.size()) == m.epochs_run);
  CHECK(static_cast<int>(m.train_loss.size()) == m.epochs_run);
  double best = std::numeric_limits<double>::infinity();
  for (double v : m.val_loss) best = std::min(best, v);
  CHECK(m.best_val_loss == doctest::Approx(best).epsilon(1e-12));
  CHECK(m.best_epoch >= 0);
  // early stopping: no more than patience epochs past the best
  CHECK(m.epochs_run - m.best_epoch <= 16);
  CHECK(m.test_accuracy >= 0.0);
  CHECK(m.test_accuracy <= 1.0);
  for (double v : m.train_loss) CHECK(std::isfinite(v));
}

TEST_CASE("gat backbone with edge features trains end to end") {
  Graph g = small_dataset(20, 19);
  RunConfig rc;  // default 8 aux heads keep the 18-wide schema
  rc.gat_hidden = 4;
  rc.epochs = 25;
  rc.patience = 10;
  rc.backbone = "gat";
  EdgeFeatureBundle bundle = build_edge_features(g, rc, 23);
  CHECK(bundle.table.width() == 18);
  MainModelConfig cfg = fast_main("gat", true);
  cfg.epochs = 25;
  MainModel model = build_main_model(cfg, static_cast<int>(g.features.cols()),
                                     2, g.max_out_degree(),
                                     bundle.table.width(), 29);
  SeedRunMetrics m = train_main(g, bundle.table, model, 29);
  CHECK(std::isfinite(m.best_val_loss));
  CHECK(m.test_accuracy > 0.5);  // two balanced classes
}

TEST_CASE("inductive hygiene: test labels never influence training") {
  Graph g = small_dataset(25, 31);
  EdgeFeatureTable table = random_table(g, 6, 3);
  auto run = [&](Graph graph) {
    MainModelConfig cfg = fast_main("gcn", true);
    cfg.epochs = 12;
    MainModel model =
        build_main_model(cfg, static_cast<int>(graph.features.cols()), 2,
                         graph.max_out_degree(), 6, 41);
    train_main(graph, table, model, 41);
    return model.params->snapshot();
  };
  Graph scrambled = g;
  for (int i = 0; i < g.n_nodes; ++i) {
    if (scrambled.test_mask[i]) {
      scrambled.class_ids[i] = 1 - scrambled.class_ids[i];
    }
  }
  auto snap_a = run(g);
  auto snap_b = run(scrambled);
  REQUIRE(snap_a.size() == snap_b.size());
  for (const auto& [name, value] : snap_a) {
    const Matrix& other = snap_b.at(name);
    REQUIRE(other.size() == value.size());
    CHECK(std::memcmp(value.data(), other.data(),
                      sizeof(double) * value.size()) == 0);
  }
}

TEST_CASE("evaluate_runs aggregates accuracy with a t-interval") {
  Graph g = small_dataset(20, 37);
  EdgeFeatureTable table = random_table(g, 0, 0);
  MainModelConfig cfg = fast_main("gcn", false);
  cfg.epochs = 15;
  RunReport report = evaluate_runs(g, table, cfg, {1, 2, 3});
  CHECK(report.runs.size() == 3);
  CHECK(report.ci_lo <= report.mean_accuracy);
  CHECK(report.ci_hi >= report.mean_accuracy);
  CHECK(report.wall_clock_sec > 0.0);

  SUBCASE("determinism: identical config and seeds reproduce the report") {
    RunReport again = evaluate_runs(g, table, cfg, {1, 2, 3});
    nlohmann::json a = run_report_to_json(report);
    nlohmann::json b = run_report_to_json(again);
    a.erase("wall_clock_sec");
    b.erase("wall_clock_sec");
    CHECK(a == b);
  }
  SUBCASE("welch attachment") {
    RunReport base = report;
    attach_welch(base, report);
    CHECK(base.has_welch);
    CHECK(base.welch_p == 1.0);  // identical accuracy lists
  }
}

TEST_CASE("evaluate_runs needs at least two seeds") {
  Graph g = small_dataset(10, 41);
  EdgeFeatureTable table = random_table(g, 0, 0);
  CHECK_THROWS_AS(evaluate_runs(g, table, fast_main("gcn", false), {1}),
                  std::invalid_argument);
}
