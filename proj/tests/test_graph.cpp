#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "edgeforge/graph.hpp"

using namespace edgeforge;

namespace {

Graph random_graph(int n, double edge_prob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EdgeTriple> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && u(rng) < edge_prob) {
        edges.emplace_back(i, j, u(rng) + 0.1);
      }
    }
  }
  return make_graph(n, std::move(edges));
}

Graph two_cliques(int size_each) {
  std::vector<EdgeTriple> edges;
  for (int base : {0, size_each}) {
    for (int i = 0; i < size_each; ++i) {
      for (int j = 0; j < size_each; ++j) {
        if (i != j) edges.emplace_back(base + i, base + j, 1.0);
      }
    }
  }
  return make_graph(2 * size_each, std::move(edges));
}

}  // namespace

TEST_CASE("neighborhood basics") {
  SUBCASE("isolated node has empty neighborhood") {
    Graph g = make_graph(3, {{1, 2, 1.0}});
    CHECK(neighborhood(g, 0).empty());
  }
  SUBCASE("triangle node 0") {
    Graph g = make_graph(3, {{0, 1, 1.0}, {0, 2, 1.0}, {1, 2, 1.0}});
    auto nb = neighborhood(g, 0);
    REQUIRE(nb.size() == 2);
    CHECK(nb[0].first == 1);
    CHECK(nb[1].first == 2);
    CHECK(g.edge_src[nb[0].second] == 0);
    CHECK(g.edge_dst[nb[0].second] == 1);
  }
  SUBCASE("out-of-range node throws") {
    Graph g = make_graph(2, {{0, 1, 1.0}});
    CHECK_THROWS_AS(neighborhood(g, 2), std::out_of_range);
    CHECK_THROWS_AS(neighborhood(g, -1), std::out_of_range);
  }
}

TEST_CASE("neighborhood equals brute-force edge scan on random graphs") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Graph g = random_graph(30, 0.15, seed);
    for (int i = 0; i < g.n_nodes; ++i) {
      std::vector<std::pair<int, int>> brute;
      for (int e = 0; e < g.num_edges(); ++e) {
        if (g.edge_src[e] == i) brute.emplace_back(g.edge_dst[e], e);
      }
      std::sort(brute.begin(), brute.end());
      CHECK(neighborhood(g, i) == brute);
    }
  }
}

TEST_CASE("CSR and edge list views agree") {
  Graph g = random_graph(40, 0.1, 99);
  std::vector<std::tuple<int, int>> from_csr;
  for (int i = 0; i < g.n_nodes; ++i) {
    for (auto [j, e] : neighborhood(g, i)) {
      from_csr.emplace_back(i, j);
      CHECK(g.edge_src[e] == i);
      CHECK(g.edge_dst[e] == j);
    }
  }
  std::vector<std::tuple<int, int>> from_list;
  for (int e = 0; e < g.num_edges(); ++e) {
    from_list.emplace_back(g.edge_src[e], g.edge_dst[e]);
  }
  std::sort(from_list.begin(), from_list.end());
  std::sort(from_csr.begin(), from_csr.end());
  CHECK(from_csr == from_list);
}

TEST_CASE("graph validation rejects self-loops and bad weights") {
  CHECK_THROWS_AS(make_graph(2, {{0, 0, 1.0}}), std::runtime_error);
  CHECK_THROWS_AS(make_graph(2, {{0, 1, -1.0}}), std::runtime_error);
  CHECK_THROWS_AS(make_graph(2, {{0, 3, 1.0}}), std::runtime_error);
}

TEST_CASE("symmetrized adds missing reverse edges only") {
  Graph g = make_graph(3, {{0, 1, 2.0}, {1, 0, 2.0}, {1, 2, 3.0}});
  Graph s = symmetrized(g);
  CHECK(s.num_edges() == 4);
  int e = s.find_edge(2, 1);
  REQUIRE(e >= 0);
  CHECK(s.edge_weight[e] == 3.0);
}

TEST_CASE("partition_graph") {
  SUBCASE("p equal to one yields a single part") {
    Graph g = random_graph(20, 0.2, 1);
    Partition p = partition_graph(g, 1, 7);
    CHECK(p.part_size() == std::vector<int>{20});
  }
  SUBCASE("p equal to n yields singletons") {
    Graph g = random_graph(12, 0.2, 2);
    Partition p = partition_graph(g, 12, 7);
    for (int s : p.part_size()) CHECK(s == 1);
  }
  SUBCASE("p out of range throws") {
    Graph g = random_graph(5, 0.5, 3);
    CHECK_THROWS_AS(partition_graph(g, 0, 7), std::invalid_argument);
    CHECK_THROWS_AS(partition_graph(g, 6, 7), std::invalid_argument);
  }
  SUBCASE("two disconnected 10-cliques split with zero cut") {
    Graph g = two_cliques(10);
    Partition p = partition_graph(g, 2, 123);
    auto sizes = p.part_size();
    CHECK(sizes[0] == 10);
    CHECK(sizes[1] == 10);
    for (int e = 0; e < g.num_edges(); ++e) {
      CHECK(p.assignment[g.edge_src[e]] == p.assignment[g.edge_dst[e]]);
    }
  }
  SUBCASE("balance within 20 percent and deterministic under seed") {
    for (std::uint64_t seed : {11ull, 12ull}) {
      Graph g = random_graph(150, 0.05, 4);
      Partition a = partition_graph(g, 7, seed);
      Partition b = partition_graph(g, 7, seed);
      CHECK(a.assignment == b.assignment);
      double t = 150.0 / 7;
      for (int s : a.part_size()) {
        CHECK(s >= static_cast<int>(std::floor(0.8 * t)));
        CHECK(s <= static_cast<int>(std::ceil(1.2 * t)));
      }
    }
  }
}

TEST_CASE("minibatch_epoch") {
  Graph g = random_graph(60, 0.08, 5);
  g.class_ids.assign(60, 1);
  Partition p = partition_graph(g, 6, 3);

  SUBCASE("single part gives the whole graph") {
    Partition one = partition_graph(g, 1, 3);
    auto batches = minibatch_epoch(g, one, 4, 0);
    REQUIRE(batches.size() == 1);
    CHECK(batches[0].graph.n_nodes == 60);
    CHECK(batches[0].graph.num_edges() == g.num_edges());
  }
  SUBCASE("batch of 2 over 4 parts gives 2 batches covering all parts") {
    Partition p4 = partition_graph(g, 4, 9);
    auto batches = minibatch_epoch(g, p4, 2, 1);
    CHECK(batches.size() == 2);
    std::set<int> seen;
    for (const auto& b : batches) {
      for (int gn : b.global_nodes) seen.insert(gn);
    }
    CHECK(seen.size() == 60);
  }
  SUBCASE("every node appears exactly once per epoch") {
    auto batches = minibatch_epoch(g, p, 2, 42);
    std::vector<int> count(60, 0);
    for (const auto& b : batches) {
      for (int gn : b.global_nodes) count[gn]++;
    }
    CHECK(std::all_of(count.begin(), count.end(),
                      [](int c) { return c == 1; }));
  }
  SUBCASE("node id remap round-trips and edges map back") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto batches = minibatch_epoch(g, p, 3, seed);
      for (const auto& b : batches) {
        for (int local = 0; local < b.graph.n_nodes; ++local) {
          int global = b.global_nodes[local];
          auto it = std::lower_bound(b.global_nodes.begin(),
                                     b.global_nodes.end(), global);
          CHECK(static_cast<int>(it - b.global_nodes.begin()) == local);
          CHECK(b.graph.class_ids[local] == g.class_ids[global]);
        }
        for (int e = 0; e < b.graph.num_edges(); ++e) {
          int ge = b.global_edges[e];
          CHECK(g.edge_src[ge] == b.global_nodes[b.graph.edge_src[e]]);
          CHECK(g.edge_dst[ge] == b.global_nodes[b.graph.edge_dst[e]]);
        }
      }
    }
  }
  SUBCASE("inter-part edges kept when both parts are selected") {
    Partition one = partition_graph(g, 1, 3);
    auto whole = minibatch_epoch(g, one, 1, 0);
    CHECK(whole[0].graph.num_edges() == g.num_edges());
  }
}

TEST_CASE("edge feature table validation") {
  Graph g = make_graph(3, {{0, 1, 1.0}, {1, 2, 1.0}});
  EdgeFeatureTable t;
  t.rows = Matrix::Constant(2, 18, 0.5);
  validate_edge_features(t, g, 16);
  t.rows(1, 3) = 1.5;
  CHECK_THROWS_AS(validate_edge_features(t, g, 16), std::runtime_error);
  t.rows(1, 3) = 0.5;
  t.rows(0, 17) = -3.7;  // non-attention column may be any finite value
  validate_edge_features(t, g, 16);
  EdgeFeatureTable bad;
  bad.rows = Matrix::Zero(1, 18);
  CHECK_THROWS_AS(validate_edge_features(bad, g, 16), std::runtime_error);
}
