#include "edgeforge/io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace edgeforge {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write(const std::string& path, const std::string& content) {
  fs::path target(path);
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path());
  }
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path);
  return in;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

Matrix read_tsv_matrix(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error(path + ": ragged row " +
                               std::to_string(rows.size()));
    }
    rows.push_back(std::move(row));
  }
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

void write_tsv_matrix(const std::string& path, const Matrix& m) {
  std::ostringstream os;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << '\t';
      os << format_double(m(r, c));
    }
    os << '\n';
  }
  atomic_write(path, os.str());
}

Matrix read_matrix_market(const std::string& path) {
  std::ifstream in = open_input(path);
  std::string header;
  if (!std::getline(in, header) ||
      header.rfind("%%MatrixMarket", 0) != 0) {
    throw std::runtime_error(path + ": not a MatrixMarket file");
  }
  bool coordinate = header.find("coordinate") != std::string::npos;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '%') break;
  }
  std::istringstream sizes(line);
  if (coordinate) {
    Eigen::Index rows, cols;
    long long nnz;
    sizes >> rows >> cols >> nnz;
    Matrix m = Matrix::Zero(rows, cols);
    for (long long i = 0; i < nnz; ++i) {
      Eigen::Index r, c;
      double v;
      if (!(in >> r >> c >> v)) {
        throw std::runtime_error(path + ": truncated MatrixMarket data");
      }
      m(r - 1, c - 1) = v;
    }
    return m;
  }
  Eigen::Index rows, cols;
  sizes >> rows >> cols;
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {  // array format is column-major
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!(in >> m(r, c))) {
        throw std::runtime_error(path + ": truncated MatrixMarket data");
      }
    }
  }
  return m;
}

Matrix read_feature_matrix(const std::string& path) {
  if (fs::path(path).extension() == ".mtx") return read_matrix_market(path);
  return read_tsv_matrix(path);
}

std::vector<int> read_int_column(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<int> out;
  int v;
  while (in >> v) out.push_back(v);
  return out;
}

void write_int_column(const std::string& path, const std::vector<int>& v) {
  std::ostringstream os;
  for (int x : v) os << x << '\n';
  atomic_write(path, os.str());
}

std::vector<EdgeTriple> read_edge_tsv(const std::string& path) {
  std::ifstream in = open_input(path);
  std::vector<EdgeTriple> edges;
  int s, d;
  double w;
  while (in >> s >> d >> w) edges.emplace_back(s, d, w);
  return edges;
}

void write_edge_tsv(const std::string& path, const Graph& g) {
  std::ostringstream os;
  for (int e = 0; e < g.num_edges(); ++e) {
    os << g.edge_src[e] << '\t' << g.edge_dst[e] << '\t'
       << format_double(g.edge_weight[e]) << '\n';
  }
  atomic_write(path, os.str());
}

namespace {

json mask_to_ids(const std::vector<std::uint8_t>& mask) {
  json ids = json::array();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) ids.push_back(i);
  }
  return ids;
}

std::vector<std::uint8_t> ids_to_mask(const json& ids, int n) {
  std::vector<std::uint8_t> mask(n, 0);
  for (int i : ids) {
    if (i < 0 || i >= n) {
      throw std::runtime_error("masks.json: node id out of range");
    }
    mask[i] = 1;
  }
  return mask;
}

}  // namespace

void save_graph(const std::string& dir, const Graph& g) {
  fs::create_directories(dir);
  write_edge_tsv(dir + "/edges.tsv", g);
  if (g.features.size() > 0) {
    write_tsv_matrix(dir + "/features.tsv", g.features);
  }
  if (!g.batch_ids.empty()) write_int_column(dir + "/batches.tsv", g.batch_ids);
  if (!g.community_ids.empty()) {
    write_int_column(dir + "/communities.tsv", g.community_ids);
  }
  if (!g.class_ids.empty()) write_int_column(dir + "/classes.tsv", g.class_ids);
  json meta;
  meta["n_nodes"] = g.n_nodes;
  meta["n_edges"] = g.num_edges();
  if (!g.train_mask.empty()) meta["train"] = mask_to_ids(g.train_mask);
  if (!g.val_mask.empty()) meta["val"] = mask_to_ids(g.val_mask);
  if (!g.test_mask.empty()) meta["test"] = mask_to_ids(g.test_mask);
  atomic_write(dir + "/masks.json", meta.dump(2) + "\n");
}

Graph load_graph(const std::string& dir) {
  std::ifstream meta_in(dir + "/masks.json");
  if (!meta_in) throw MissingInputError(dir + "/masks.json");
  json meta = json::parse(meta_in);
  int n = meta.at("n_nodes").get<int>();

  Matrix features;
  if (fs::exists(dir + "/features.tsv")) {
    features = read_tsv_matrix(dir + "/features.tsv");
  } else if (fs::exists(dir + "/features.mtx")) {
    features = read_matrix_market(dir + "/features.mtx");
  }
  Graph g = make_graph(n, read_edge_tsv(dir + "/edges.tsv"),
                       std::move(features));
  if (fs::exists(dir + "/batches.tsv")) {
    g.batch_ids = read_int_column(dir + "/batches.tsv");
  }
  if (fs::exists(dir + "/communities.tsv")) {
    g.community_ids = read_int_column(dir + "/communities.tsv");
  }
  if (fs::exists(dir + "/classes.tsv")) {
    g.class_ids = read_int_column(dir + "/classes.tsv");
  }
  if (meta.contains("train")) g.train_mask = ids_to_mask(meta["train"], n);
  if (meta.contains("val")) g.val_mask = ids_to_mask(meta["val"], n);
  if (meta.contains("test")) g.test_mask = ids_to_mask(meta["test"], n);
  validate_graph(g);
  return g;
}

void save_edge_table(const std::string& path, const EdgeFeatureTable& t) {
  write_tsv_matrix(path, t.rows);
}

EdgeFeatureTable load_edge_table(const std::string& path, const Graph& g) {
  EdgeFeatureTable t;
  t.rows = read_tsv_matrix(path);
  if (t.rows.rows() != g.num_edges()) {
    throw std::runtime_error(path + ": row count does not match edge count");
  }
  return t;
}

// ---------------------------------------------------------------------------
// RunConfig

namespace {

template <typename T>
void pick(const json& j, const char* key, T& field,
          std::vector<std::string>& known) {
  known.push_back(key);
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  std::vector<std::string> known;
  pick(j, "backbone", c.backbone, known);
  pick(j, "layers", c.layers, known);
  pick(j, "gat_hidden", c.gat_hidden, known);
  pick(j, "gat_heads", c.gat_heads, known);
  pick(j, "gcn_hidden", c.gcn_hidden, known);
  pick(j, "optimizer", c.optimizer, known);
  pick(j, "weight_decay", c.weight_decay, known);
  pick(j, "batch_size", c.batch_size, known);
  pick(j, "gat_dropout", c.gat_dropout, known);
  pick(j, "gcn_dropout", c.gcn_dropout, known);
  pick(j, "leaky_relu_slope", c.leaky_relu_slope, known);
  pick(j, "epochs", c.epochs, known);
  pick(j, "patience", c.patience, known);
  pick(j, "lr", c.lr, known);
  pick(j, "k", c.k, known);
  pick(j, "d_pca", c.d_pca, known);
  pick(j, "knn_mode", c.knn_mode, known);
  pick(j, "symmetrize", c.symmetrize, known);
  pick(j, "partition_count", c.partition_count, known);
  pick(j, "st_heads", c.st_heads, known);
  pick(j, "st_output_dim", c.st_output_dim, known);
  pick(j, "use_edge_features", c.use_edge_features, known);
  pick(j, "use_aux_community", c.use_aux_community, known);
  pick(j, "use_aux_batch", c.use_aux_batch, known);
  pick(j, "use_curvature", c.use_curvature, known);
  pick(j, "use_node2vec", c.use_node2vec, known);
  pick(j, "aux_holdout", c.aux_holdout, known);
  pick(j, "n2v_dim", c.n2v_dim, known);
  pick(j, "n2v_p", c.n2v_p, known);
  pick(j, "n2v_q", c.n2v_q, known);
  pick(j, "n2v_walk_len", c.n2v_walk_len, known);
  pick(j, "n2v_walks", c.n2v_walks, known);
  pick(j, "n2v_window", c.n2v_window, known);
  pick(j, "n2v_negatives", c.n2v_negatives, known);
  pick(j, "louvain_resolution", c.louvain_resolution, known);
  pick(j, "seeds", c.seeds, known);
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::runtime_error("config: unknown key \"" + key + "\"");
    }
  }
  validate_run_config(c);
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["backbone"] = c.backbone;
  j["layers"] = c.layers;
  j["gat_hidden"] = c.gat_hidden;
  j["gat_heads"] = c.gat_heads;
  j["gcn_hidden"] = c.gcn_hidden;
  j["optimizer"] = c.optimizer;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["gat_dropout"] = c.gat_dropout;
  j["gcn_dropout"] = c.gcn_dropout;
  j["leaky_relu_slope"] = c.leaky_relu_slope;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["lr"] = c.lr;
  j["k"] = c.k;
  j["d_pca"] = c.d_pca;
  j["knn_mode"] = c.knn_mode;
  j["symmetrize"] = c.symmetrize;
  j["partition_count"] = c.partition_count;
  j["st_heads"] = c.st_heads;
  j["st_output_dim"] = c.st_output_dim;
  j["use_edge_features"] = c.use_edge_features;
  j["use_aux_community"] = c.use_aux_community;
  j["use_aux_batch"] = c.use_aux_batch;
  j["use_curvature"] = c.use_curvature;
  j["use_node2vec"] = c.use_node2vec;
  j["aux_holdout"] = c.aux_holdout;
  j["n2v_dim"] = c.n2v_dim;
  j["n2v_p"] = c.n2v_p;
  j["n2v_q"] = c.n2v_q;
  j["n2v_walk_len"] = c.n2v_walk_len;
  j["n2v_walks"] = c.n2v_walks;
  j["n2v_window"] = c.n2v_window;
  j["n2v_negatives"] = c.n2v_negatives;
  j["louvain_resolution"] = c.louvain_resolution;
  j["seeds"] = c.seeds;
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path);
  return run_config_from_json(json::parse(in));
}

void validate_run_config(const RunConfig& c) {
  if (c.backbone != "gcn" && c.backbone != "gat") {
    throw std::runtime_error("config: backbone must be gcn or gat");
  }
  if (c.optimizer != "adagrad") {
    throw std::runtime_error("config: only the adagrad optimizer is built in");
  }
  if (c.knn_mode != "knn" && c.knn_mode != "bbknn") {
    throw std::runtime_error("config: knn_mode must be knn or bbknn");
  }
  if (c.layers != 2) {
    throw std::runtime_error("config: the architecture is two backbone layers");
  }
  if (c.gat_dropout < 0 || c.gat_dropout >= 1 || c.gcn_dropout < 0 ||
      c.gcn_dropout >= 1) {
    throw std::runtime_error("config: dropout must lie in [0, 1)");
  }
  if (c.epochs < 1 || c.patience < 0 || c.batch_size < 1 || c.k < 1 ||
      c.st_heads < 1 || c.st_output_dim < 1) {
    throw std::runtime_error("config: non-positive training parameter");
  }
  if (c.st_output_dim % c.st_heads != 0) {
    throw std::runtime_error(
        "config: st_output_dim must be divisible by st_heads");
  }
  if (c.seeds.empty()) throw std::runtime_error("config: seeds empty");
}

// ---------------------------------------------------------------------------
// RunReport

std::vector<double> RunReport::accuracies() const {
  std::vector<double> xs;
  xs.reserve(runs.size());
  for (const auto& r : runs) xs.push_back(r.test_accuracy);
  return xs;
}

json run_report_to_json(const RunReport& r) {
  json j;
  j["runs"] = json::array();
  for (const auto& m : r.runs) {
    json rj;
    rj["seed"] = m.seed;
    rj["test_accuracy"] = m.test_accuracy;
    rj["best_val_loss"] = m.best_val_loss;
    rj["best_epoch"] = m.best_epoch;
    rj["epochs_run"] = m.epochs_run;
    rj["train_loss"] = m.train_loss;
    rj["val_loss"] = m.val_loss;
    j["runs"].push_back(std::move(rj));
  }
  j["mean_accuracy"] = r.mean_accuracy;
  j["ci95"] = {r.ci_lo, r.ci_hi};
  if (r.has_welch) {
    j["welch"] = {{"t", r.welch_t}, {"dof", r.welch_dof}, {"p", r.welch_p}};
  }
  j["wall_clock_sec"] = r.wall_clock_sec;
  return j;
}

RunReport run_report_from_json(const json& j) {
  RunReport r;
  for (const auto& rj : j.at("runs")) {
    SeedRunMetrics m;
    m.seed = rj.at("seed").get<std::uint64_t>();
    m.test_accuracy = rj.at("test_accuracy").get<double>();
    m.best_val_loss = rj.at("best_val_loss").get<double>();
    m.best_epoch = rj.at("best_epoch").get<int>();
    m.epochs_run = rj.at("epochs_run").get<int>();
    m.train_loss = rj.at("train_loss").get<std::vector<double>>();
    m.val_loss = rj.at("val_loss").get<std::vector<double>>();
    r.runs.push_back(std::move(m));
  }
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  r.ci_lo = j.at("ci95")[0].get<double>();
  r.ci_hi = j.at("ci95")[1].get<double>();
  if (j.contains("welch")) {
    r.has_welch = true;
    r.welch_t = j["welch"].at("t").get<double>();
    r.welch_dof = j["welch"].at("dof").get<double>();
    r.welch_p = j["welch"].at("p").get<double>();
  }
  r.wall_clock_sec = j.at("wall_clock_sec").get<double>();
  return r;
}

void save_run_report(const std::string& path, const RunReport& r) {
  atomic_write(path, run_report_to_json(r).dump(2) + "\n");
}

RunReport load_run_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path);
  return run_report_from_json(json::parse(in));
}

void save_loss_curves(const std::string& path, const SeedRunMetrics& m) {
  std::ostringstream os;
  os << "epoch\ttrain_nll\tval_nll\n";
  for (std::size_t e = 0; e < m.train_loss.size(); ++e) {
    os << e << '\t' << format_double(m.train_loss[e]) << '\t'
       << format_double(e < m.val_loss.size() ? m.val_loss[e] : 0.0) << '\n';
  }
  atomic_write(path, os.str());
}

int env_thread_cap(int fallback) {
  const char* env = std::getenv("EDGEFORGE_THREADS");
  if (env == nullptr) return fallback;
  int v = std::atoi(env);
  return v >= 1 ? v : 1;
}

}  // namespace edgeforge
