#pragma once

#include <cstdint>
#include <vector>

#include "edgeforge/graph.hpp"

namespace edgeforge {

enum class LabelRule { kBlockDerived, kPlantedEdgeSignal };

/// Block-structured feature generator with batch confounding: features are
/// block mean + batch shift + Gaussian noise.
struct SbmSpec {
  std::vector<int> block_sizes;
  Matrix block_means;   // n_blocks x F
  double noise_sigma = 1.0;
  int n_batches = 1;
  Matrix batch_shifts;  // n_batches x F; empty means zero shift
  LabelRule rule = LabelRule::kBlockDerived;
  double flip_rate = 0.0;
  std::uint64_t seed = 0;

  int n_nodes() const;
  int n_features() const { return static_cast<int>(block_means.cols()); }
};

struct SynthData {
  Matrix features;
  std::vector<int> batch_ids;
  std::vector<int> block_ids;
  /// Block-derived labels; for the planted rule this stays empty until
  /// plant_edge_signal runs on the constructed graph.
  std::vector<int> labels;
};

void validate_spec(const SbmSpec& spec);

SynthData generate(const SbmSpec& spec);

/// Uncorrupted planted rule: majority block among out-neighbors (ties to the
/// lower block id, own block when isolated) XOR own block.
int planted_rule_label(const Graph& g, const std::vector<int>& block_ids,
                       int node);

/// Labels under the planted rule, corrupted at `flip_rate` by switching to a
/// uniformly random different class.
std::vector<int> plant_edge_signal(const Graph& g,
                                   const std::vector<int>& block_ids,
                                   double flip_rate, std::uint64_t seed);

/// Disjoint train/val/test masks covering all nodes, seeded shuffle.
struct SplitMasks {
  std::vector<std::uint8_t> train, val, test;
};
SplitMasks random_split(int n, double train_frac, double val_frac,
                        std::uint64_t seed);

}  // namespace edgeforge
