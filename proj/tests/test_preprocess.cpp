#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "edgeforge/preprocess.hpp"

using namespace edgeforge;

namespace {

Matrix random_mat(int n, int f, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, f);
  for (int c = 0; c < f; ++c) {
    for (int r = 0; r < n; ++r) m(r, c) = g(rng);
  }
  return m;
}

std::set<std::tuple<int, int>> edge_set(const std::vector<EdgeTriple>& edges) {
  std::set<std::tuple<int, int>> s;
  for (const auto& [a, b, w] : edges) s.insert({a, b});
  return s;
}

}  // namespace

TEST_CASE("normalize_counts") {
  SUBCASE("single cell") {
    Matrix x(1, 1);
    x << 4.0;
    CHECK(normalize_counts(x)(0, 0) == 2.0);
  }
  SUBCASE("two rows scaled to the median row sum then square-rooted") {
    Matrix x(2, 2);
    x << 1, 1, 2, 2;
    Matrix y = normalize_counts(x);
    // median row sum = 3; each row rescaled to sum 3 -> entries 1.5
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 2; ++c) {
        CHECK(y(r, c) == doctest::Approx(std::sqrt(1.5)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("zero rows rejected with row list") {
    Matrix x = Matrix::Zero(3, 2);
    x(0, 0) = 1.0;
    CHECK_THROWS_WITH_AS(normalize_counts(x),
                         "normalize_counts: all-zero rows: 1 2",
                         std::invalid_argument);
  }
  SUBCASE("negative entries rejected") {
    Matrix x(1, 2);
    x << 1, -1;
    CHECK_THROWS_AS(normalize_counts(x), std::invalid_argument);
  }
}

TEST_CASE("fit_pca on collinear data") {
  int n = 50;
  Matrix x(n, 2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int i = 0; i < n; ++i) {
    double t = g(rng);
    x(i, 0) = 2.0 * t + 1.0;
    x(i, 1) = -1.0 * t + 0.5;
  }
  PcaModel m = fit_pca(x, 2);
  Eigen::Vector2d line(2.0, -1.0);
  line.normalize();
  CHECK(std::abs(std::abs(m.components.col(0).dot(line)) - 1.0) < 1e-10);
  CHECK(m.explained(1) < 1e-12);
}

TEST_CASE("fit_pca full-rank reconstruction and variance ordering") {
  Matrix x = random_mat(50, 10, 77);
  PcaModel m = fit_pca(x, 10);
  Matrix centered = x.rowwise() - m.mean.transpose();
  Matrix recon = pca_transform(m, x) * m.components.transpose();
  CHECK((recon - centered).cwiseAbs().maxCoeff() < 1e-8);
  for (int j = 1; j < 10; ++j) CHECK(m.explained(j) <= m.explained(j - 1));
  CHECK((m.components.transpose() * m.components - Matrix::Identity(10, 10))
            .cwiseAbs()
            .maxCoeff() < 1e-8);
}

TEST_CASE("fit_pca projection variance equals explained variance") {
  Matrix x = random_mat(80, 6, 13);
  PcaModel m = fit_pca(x, 4);
  Matrix z = pca_transform(m, x);
  for (int j = 0; j < 4; ++j) {
    double var = z.col(j).squaredNorm() / (z.rows() - 1);
    CHECK(var == doctest::Approx(m.explained(j)).epsilon(1e-6));
  }
}

TEST_CASE("fit_pca rejects oversized d_pca") {
  Matrix x = random_mat(5, 3, 1);
  CHECK_THROWS_AS(fit_pca(x, 4), std::invalid_argument);
  CHECK_THROWS_AS(fit_pca(random_mat(3, 10, 1), 3), std::invalid_argument);
}

TEST_CASE("knn_edges tie-break and complete graph") {
  SUBCASE("collinear equidistant points prefer the lower id") {
    Matrix z(3, 1);
    z << 0.0, 1.0, 2.0;
    auto edges = knn_edges(z, 1);
    REQUIRE(edges.size() == 3);
    // node 1 ties between 0 and 2 -> chooses 0
    bool found = false;
    for (const auto& [s, d, w] : edges) {
      if (s == 1) {
        CHECK(d == 0);
        CHECK(w == 1.0);
        found = true;
      }
    }
    CHECK(found);
  }
  SUBCASE("k = n-1 gives the complete directed graph") {
    Matrix z = random_mat(7, 3, 5);
    auto edges = knn_edges(z, 6);
    CHECK(edges.size() == 42);
  }
  SUBCASE("k out of range") {
    Matrix z = random_mat(4, 2, 6);
    CHECK_THROWS_AS(knn_edges(z, 4), std::invalid_argument);
    CHECK_THROWS_AS(knn_edges(z, 0), std::invalid_argument);
  }
}

TEST_CASE("knn_edges equals brute-force all-pairs scan") {
  Matrix z = random_mat(100, 5, 21);
  int k = 4;
  auto edges = knn_edges(z, k);
  std::set<std::tuple<int, int>> got = edge_set(edges);
  for (int i = 0; i < 100; ++i) {
    std::vector<std::pair<double, int>> d;
    for (int j = 0; j < 100; ++j) {
      if (j != i) d.emplace_back((z.row(i) - z.row(j)).norm(), j);
    }
    std::sort(d.begin(), d.end());
    for (int r = 0; r < k; ++r) {
      CHECK(got.count({i, d[r].second}) == 1);
    }
  }
  CHECK(edges.size() == 100 * k);
}

TEST_CASE("knn on full-rank PCA projection matches knn on centered data") {
  Matrix x = random_mat(40, 6, 31);
  PcaModel m = fit_pca(x, 6);
  Matrix z = pca_transform(m, x);
  Matrix centered = x.rowwise() - m.mean.transpose();
  CHECK(edge_set(knn_edges(z, 3)) == edge_set(knn_edges(centered, 3)));
}

TEST_CASE("bbknn_edges") {
  SUBCASE("single batch reduces to knn") {
    Matrix z = random_mat(20, 4, 9);
    std::vector<int> batches(20, 0);
    CHECK(edge_set(bbknn_edges(z, batches, 3)) ==
          edge_set(knn_edges(z, 3)));
  }
  SUBCASE("two batches of 5 give out-degree 6 with k=3") {
    Matrix z = random_mat(10, 3, 10);
    std::vector<int> batches = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    auto edges = bbknn_edges(z, batches, 3);
    std::vector<int> deg(10, 0);
    for (const auto& [s, d, w] : edges) deg[s]++;
    for (int i = 0; i < 10; ++i) CHECK(deg[i] == 6);
  }
  SUBCASE("per-batch brute force agreement and degree formula") {
    Matrix z = random_mat(60, 5, 11);
    std::mt19937_64 rng(2);
    std::vector<int> batches(60);
    for (auto& b : batches) b = static_cast<int>(rng() % 3);
    int k = 4;
    auto got = edge_set(bbknn_edges(z, batches, k));
    std::size_t expected_edges = 0;
    for (int i = 0; i < 60; ++i) {
      for (int b = 0; b < 3; ++b) {
        std::vector<std::pair<double, int>> d;
        for (int j = 0; j < 60; ++j) {
          if (j != i && batches[j] == b) {
            d.emplace_back((z.row(i) - z.row(j)).norm(), j);
          }
        }
        std::sort(d.begin(), d.end());
        int take = std::min<int>(k, static_cast<int>(d.size()));
        expected_edges += take;
        for (int r = 0; r < take; ++r) CHECK(got.count({i, d[r].second}) == 1);
      }
    }
    CHECK(got.size() == expected_edges);
  }
  SUBCASE("empty batch array rejected") {
    Matrix z = random_mat(3, 2, 1);
    CHECK_THROWS_AS(bbknn_edges(z, {}, 3), std::invalid_argument);
  }
}
