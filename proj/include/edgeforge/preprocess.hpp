#pragma once

#include <vector>

#include "edgeforge/graph.hpp"

namespace edgeforge {

/// Scales every row to the median row-sum of the input, then applies an
/// element-wise square root. Rows summing to zero are an error.
Matrix normalize_counts(const Matrix& counts);

struct PcaModel {
  Matrix components;   // F x d, orthonormal columns
  Vector mean;         // F
  Vector explained;    // d, non-increasing
};

/// Top-d eigenvectors of the centered covariance. Component signs are fixed
/// so the largest-magnitude entry of each column is positive.
PcaModel fit_pca(const Matrix& x, int d_pca = 50);

/// Projects rows of x into the PCA space: (x - mean) * components.
Matrix pca_transform(const PcaModel& m, const Matrix& x);

/// Directed kNN edges by Euclidean distance, ties broken by lower node id;
/// edge weight is the distance. Self excluded.
std::vector<EdgeTriple> knn_edges(const Matrix& z, int k);

/// Batch-balanced kNN: k nearest neighbors within every batch (own batch
/// included, self excluded); per-node clamp when a batch is smaller than k.
std::vector<EdgeTriple> bbknn_edges(const Matrix& z,
                                    const std::vector<int>& batch_ids,
                                    int k_per_batch = 3);

}  // namespace edgeforge
