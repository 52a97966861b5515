#include "edgeforge/synth.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace edgeforge {

int SbmSpec::n_nodes() const {
  return std::accumulate(block_sizes.begin(), block_sizes.end(), 0);
}

void validate_spec(const SbmSpec& spec) {
  if (spec.block_sizes.empty()) {
    throw std::invalid_argument("synth: no blocks");
  }
  for (int s : spec.block_sizes) {
    if (s <= 0) throw std::invalid_argument("synth: non-positive block size");
  }
  if (spec.block_means.rows() !=
      static_cast<Eigen::Index>(spec.block_sizes.size())) {
    throw std::invalid_argument("synth: block mean rows != block count");
  }
  if (spec.noise_sigma < 0.0) {
    throw std::invalid_argument("synth: negative noise sigma");
  }
  if (spec.n_batches < 1) {
    throw std::invalid_argument("synth: n_batches must be >= 1");
  }
  if (spec.batch_shifts.size() > 0 &&
      (spec.batch_shifts.rows() != spec.n_batches ||
       spec.batch_shifts.cols() != spec.block_means.cols())) {
    throw std::invalid_argument("synth: batch shift shape mismatch");
  }
  if (spec.flip_rate < 0.0 || spec.flip_rate > 1.0) {
    throw std::invalid_argument("synth: flip rate outside [0, 1]");
  }
}

SynthData generate(const SbmSpec& spec) {
  validate_spec(spec);
  int n = spec.n_nodes();
  int f = spec.n_features();
  SynthData data;
  data.features.resize(n, f);
  data.batch_ids.resize(n);
  data.block_ids.resize(n);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  int node = 0;
  for (std::size_t b = 0; b < spec.block_sizes.size(); ++b) {
    for (int i = 0; i < spec.block_sizes[b]; ++i, ++node) {
      data.block_ids[node] = static_cast<int>(b);
      data.batch_ids[node] = i % spec.n_batches;
      Eigen::RowVectorXd row = spec.block_means.row(b);
      if (spec.batch_shifts.size() > 0) {
        row += spec.batch_shifts.row(data.batch_ids[node]);
      }
      for (int c = 0; c < f; ++c) {
        row(c) += spec.noise_sigma * noise(rng);
      }
      data.features.row(node) = row;
    }
  }
  if (spec.rule == LabelRule::kBlockDerived) {
    data.labels = data.block_ids;
    if (spec.flip_rate > 0.0) {
      int n_classes = static_cast<int>(spec.block_sizes.size());
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int i = 0; i < n && n_classes > 1; ++i) {
        if (u(rng) < spec.flip_rate) {
          int shift = 1 + static_cast<int>(rng() % (n_classes - 1));
          data.labels[i] = (data.labels[i] + shift) % n_classes;
        }
      }
    }
  }
  return data;
}

int planted_rule_label(const Graph& g, const std::vector<int>& block_ids,
                       int node) {
  std::vector<int> counts;
  for (int e = g.csr_offsets[node]; e < g.csr_offsets[node + 1]; ++e) {
    int b = block_ids[g.edge_dst[e]];
    if (b >= static_cast<int>(counts.size())) counts.resize(b + 1, 0);
    counts[b]++;
  }
  int majority = block_ids[node];
  int best = 0;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b] > best) {
      best = counts[b];
      majority = static_cast<int>(b);
    }
  }
  return majority ^ block_ids[node];
}

std::vector<int> plant_edge_signal(const Graph& g,
                                   const std::vector<int>& block_ids,
                                   double flip_rate, std::uint64_t seed) {
  if (static_cast<int>(block_ids.size()) != g.n_nodes) {
    throw std::invalid_argument("plant_edge_signal: block id length mismatch");
  }
  std::vector<int> labels(g.n_nodes);
  int n_classes = 1;
  for (int i = 0; i < g.n_nodes; ++i) {
    labels[i] = planted_rule_label(g, block_ids, i);
    n_classes = std::max(n_classes, labels[i] + 1);
  }
  // classes span the XOR range of the block ids
  int max_block = 0;
  for (int b : block_ids) max_block = std::max(max_block, b);
  while ((n_classes & (n_classes - 1)) != 0 || n_classes <= max_block) {
    n_classes++;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (flip_rate > 0.0 && n_classes > 1) {
    for (int i = 0; i < g.n_nodes; ++i) {
      if (u(rng) < flip_rate) {
        int shift = 1 + static_cast<int>(rng() % (n_classes - 1));
        labels[i] = (labels[i] + shift) % n_classes;
      }
    }
  }
  return labels;
}

SplitMasks random_split(int n, double train_frac, double val_frac,
                        std::uint64_t seed) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0) {
    throw std::invalid_argument("random_split: bad fractions");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitMasks m;
  m.train.assign(n, 0);
  m.val.assign(n, 0);
  m.test.assign(n, 0);
  int n_train = static_cast<int>(train_frac * n);
  int n_val = static_cast<int>(val_frac * n);
  for (int i = 0; i < n; ++i) {
    if (i < n_train) {
      m.train[order[i]] = 1;
    } else if (i < n_train + n_val) {
      m.val[order[i]] = 1;
    } else {
      m.test[order[i]] = 1;
    }
  }
  return m;
}

}  // namespace edgeforge
