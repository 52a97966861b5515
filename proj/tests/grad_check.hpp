#pragma once

// Central finite-difference gradient oracle. Rebuilds the forward pass at
// perturbed inputs, so it stays independent of the adjoints it checks.

#include <functional>
#include <random>
#include <vector>

#include "edgeforge/tensor.hpp"

namespace ef_test {

using edgeforge::DiffTensor;
using edgeforge::Matrix;
using edgeforge::Tape;

using LossBuilder =
    std::function<DiffTensor(Tape&, const std::vector<DiffTensor>&)>;

inline double eval_loss(const std::vector<Matrix>& inputs,
                        const LossBuilder& build) {
  Tape tape;
  std::vector<DiffTensor> vars;
  vars.reserve(inputs.size());
  for (const Matrix& m : inputs) vars.push_back(tape.input(m));
  return build(tape, vars).value()(0, 0);
}

/// Max relative error between reverse-mode gradients and central finite
/// differences over every entry of every input.
inline double max_rel_grad_error(const std::vector<Matrix>& inputs,
                                 const LossBuilder& build,
                                 double eps = 1e-5) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<DiffTensor> vars;
    for (const Matrix& m : inputs) vars.push_back(tape.variable(m));
    DiffTensor loss = build(tape, vars);
    tape.backward(loss);
    for (const DiffTensor& v : vars) {
      analytic.push_back(v.has_grad()
                             ? v.grad()
                             : Matrix::Zero(v.rows(), v.cols()));
    }
  }
  double worst = 0.0;
  std::vector<Matrix> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        double orig = work[i](r, c);
        work[i](r, c) = orig + eps;
        double lp = eval_loss(work, build);
        work[i](r, c) = orig - eps;
        double lm = eval_loss(work, build);
        work[i](r, c) = orig;
        double fd = (lp - lm) / (2.0 * eps);
        double g = analytic[i](r, c);
        double denom = std::max({std::abs(g), std::abs(fd), 1e-4});
        worst = std::max(worst, std::abs(g - fd) / denom);
      }
    }
  }
  return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols,
                            std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  }
  return m;
}

/// Reduces a tensor to a scalar through fixed random weights so every output
/// entry feeds the loss.
inline DiffTensor weighted_sum(Tape& tape, DiffTensor x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DiffTensor w = tape.input(random_matrix(x.rows(), x.cols(), rng));
  return edgeforge::sum_all(edgeforge::mul(x, w));
}

}  // namespace ef_test
