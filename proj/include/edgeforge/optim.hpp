#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "edgeforge/tensor.hpp"

namespace edgeforge {

/// Named, shaped parameter collection. Entries have stable addresses so
/// layers can hold ParamTensor pointers across tape rebuilds.
class ModelParams {
 public:
  ParamTensor& add(const std::string& name, Matrix init);
  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<ParamTensor*> entries();
  std::vector<const ParamTensor*> entries() const;
  std::size_t size() const { return order_.size(); }

  /// Drops all gradients back to the unpopulated state.
  void zero_grad();

  /// Copies of the current values, keyed by name (for best-checkpoint
  /// bookkeeping).
  std::map<std::string, Matrix> snapshot() const;
  void restore(const std::map<std::string, Matrix>& snap);

 private:
  std::vector<std::unique_ptr<ParamTensor>> items_;
  std::vector<std::string> order_;
  std::map<std::string, std::size_t> index_;
};

/// Adagrad with coupled weight decay: g <- g + wd*theta,
/// acc <- acc + g^2, theta <- theta - lr * g / (sqrt(acc) + eps).
struct AdagradState {
  double lr = 0.01;
  double weight_decay = 0.0005;
  double eps = 1e-10;
  std::map<std::string, Matrix> accum;
};

/// Applies one Adagrad update to every parameter. Throws if any parameter
/// has no populated gradient.
void adagrad_step(ModelParams& params, AdagradState& state);

/// Glorot-style uniform init, limit sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, int fan_in,
                      int fan_out, std::mt19937_64& rng);

}  // namespace edgeforge
