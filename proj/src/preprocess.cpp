#include "edgeforge/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace edgeforge {

Matrix normalize_counts(const Matrix& counts) {
  if ((counts.array() < 0.0).any()) {
    throw std::invalid_argument("normalize_counts: negative entries");
  }
  Vector sums = counts.rowwise().sum();
  std::vector<Eigen::Index> zero_rows;
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    if (sums(r) == 0.0) zero_rows.push_back(r);
  }
  if (!zero_rows.empty()) {
    std::string rows;
    for (auto r : zero_rows) rows += " " + std::to_string(r);
    throw std::invalid_argument("normalize_counts: all-zero rows:" + rows);
  }
  std::vector<double> sorted(sums.data(), sums.data() + sums.size());
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  double median = n % 2 == 1 ? sorted[n / 2]
                             : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  Matrix scaled = counts.array().colwise() * (median / sums.array());
  return scaled.array().sqrt();
}

PcaModel fit_pca(const Matrix& x, int d_pca) {
  Eigen::Index n = x.rows(), f = x.cols();
  if (d_pca < 1 || d_pca > std::min<Eigen::Index>(n - 1, f)) {
    throw std::invalid_argument("fit_pca: d_pca must be in [1, min(n-1, F)]");
  }
  PcaModel m;
  m.mean = x.colwise().mean();
  Matrix centered = x.rowwise() - m.mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("fit_pca: eigendecomposition failed");
  }
  m.components.resize(f, d_pca);
  m.explained.resize(d_pca);
  for (int j = 0; j < d_pca; ++j) {
    Eigen::Index src = f - 1 - j;  // solver sorts ascending
    Vector col = es.eigenvectors().col(src);
    Eigen::Index arg;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0.0) col = -col;
    m.components.col(j) = col;
    m.explained(j) = std::max(0.0, es.eigenvalues()(src));
  }
  return m;
}

Matrix pca_transform(const PcaModel& m, const Matrix& x) {
  if (x.cols() != m.components.rows()) {
    throw std::invalid_argument("pca_transform: feature width mismatch");
  }
  return (x.rowwise() - m.mean.transpose()) * m.components;
}

namespace {

// k nearest rows of z to row i among `candidates` (self excluded),
// ties broken by lower node id. Returns (distance, id) pairs.
std::vector<std::pair<double, int>> nearest(const Matrix& z, int i,
                                            const std::vector<int>& candidates,
                                            int k) {
  std::vector<std::pair<double, int>> d;
  d.reserve(candidates.size());
  for (int j : candidates) {
    if (j == i) continue;
    d.emplace_back((z.row(i) - z.row(j)).norm(), j);
  }
  int take = std::min<int>(k, static_cast<int>(d.size()));
  std::partial_sort(d.begin(), d.begin() + take, d.end());
  d.resize(take);
  return d;
}

}  // namespace

std::vector<EdgeTriple> knn_edges(const Matrix& z, int k) {
  int n = static_cast<int>(z.rows());
  if (k < 1 || k >= n) {
    throw std::invalid_argument("knn_edges: k must be in [1, n-1]");
  }
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<EdgeTriple> edges;
  edges.reserve(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    for (const auto& [dist, j] : nearest(z, i, all, k)) {
      edges.emplace_back(i, j, dist);
    }
  }
  return edges;
}

std::vector<EdgeTriple> bbknn_edges(const Matrix& z,
                                    const std::vector<int>& batch_ids,
                                    int k_per_batch) {
  int n = static_cast<int>(z.rows());
  if (batch_ids.empty()) {
    throw std::invalid_argument("bbknn_edges: empty batch label array");
  }
  if (static_cast<int>(batch_ids.size()) != n) {
    throw std::invalid_argument("bbknn_edges: batch label length mismatch");
  }
  if (k_per_batch < 1) {
    throw std::invalid_argument("bbknn_edges: k_per_batch must be >= 1");
  }
  int n_batches = *std::max_element(batch_ids.begin(), batch_ids.end()) + 1;
  std::vector<std::vector<int>> members(n_batches);
  for (int i = 0; i < n; ++i) {
    if (batch_ids[i] < 0) {
      throw std::invalid_argument("bbknn_edges: negative batch id");
    }
    members[batch_ids[i]].push_back(i);
  }
  std::vector<EdgeTriple> edges;
  for (int i = 0; i < n; ++i) {
    for (int b = 0; b < n_batches; ++b) {
      for (const auto& [dist, j] : nearest(z, i, members[b], k_per_batch)) {
        edges.emplace_back(i, j, dist);
      }
    }
  }
  return edges;
}

}  // namespace edgeforge
