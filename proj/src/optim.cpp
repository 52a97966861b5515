#include "edgeforge/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace edgeforge {

ParamTensor& ModelParams::add(const std::string& name, Matrix init) {
  if (index_.count(name)) {
    throw std::invalid_argument("ModelParams: duplicate name " + name);
  }
  items_.push_back(std::make_unique<ParamTensor>(
      ParamTensor{name, std::move(init), Matrix()}));
  order_.push_back(name);
  index_[name] = items_.size() - 1;
  return *items_.back();
}

ParamTensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("ModelParams: unknown name " + name);
  }
  return *items_[it->second];
}

const ParamTensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("ModelParams: unknown name " + name);
  }
  return *items_[it->second];
}

bool ModelParams::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

std::vector<ParamTensor*> ModelParams::entries() {
  std::vector<ParamTensor*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<const ParamTensor*> ModelParams::entries() const {
  std::vector<const ParamTensor*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

void ModelParams::zero_grad() {
  for (auto& p : items_) p->grad = Matrix();
}

std::map<std::string, Matrix> ModelParams::snapshot() const {
  std::map<std::string, Matrix> snap;
  for (auto& p : items_) snap[p->name] = p->value;
  return snap;
}

void ModelParams::restore(const std::map<std::string, Matrix>& snap) {
  for (auto& p : items_) {
    auto it = snap.find(p->name);
    if (it == snap.end()) {
      throw std::out_of_range("ModelParams::restore: missing " + p->name);
    }
    p->value = it->second;
  }
}

void adagrad_step(ModelParams& params, AdagradState& state) {
  for (ParamTensor* p : params.entries()) {
    if (p->grad.size() == 0) {
      throw std::runtime_error("adagrad_step: uninitialized gradient for " +
                               p->name);
    }
    Matrix g = p->grad + state.weight_decay * p->value;
    Matrix& acc = state.accum[p->name];
    if (acc.size() == 0) acc = Matrix::Zero(g.rows(), g.cols());
    acc += g.cwiseProduct(g);
    p->value -= state.lr *
                g.cwiseQuotient((acc.cwiseSqrt().array() + state.eps).matrix());
  }
}

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, int fan_in,
                      int fan_out, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
  }
  return m;
}

}  // namespace edgeforge
