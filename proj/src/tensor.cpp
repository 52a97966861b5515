#include "edgeforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace edgeforge {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Tape* common_tape(DiffTensor a, DiffTensor b) {
  if (a.tape() != b.tape()) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
  return a.tape();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DiffTensor

Eigen::Index DiffTensor::rows() const { return tape_->value(id_).rows(); }
Eigen::Index DiffTensor::cols() const { return tape_->value(id_).cols(); }
const Matrix& DiffTensor::value() const { return tape_->value(id_); }
const Matrix& DiffTensor::grad() const { return tape_->grad(id_); }
bool DiffTensor::has_grad() const { return tape_->has_grad(id_); }

// ---------------------------------------------------------------------------
// SparseOp

SparseOp SparseOp::from_triplets(int rows, int cols,
                                 std::vector<std::tuple<int, int, double>> t) {
  SparseOp s;
  s.rows = rows;
  s.cols = cols;
  std::sort(t.begin(), t.end());
  s.offsets.assign(rows + 1, 0);
  for (const auto& tr : t) s.offsets[std::get<0>(tr) + 1]++;
  for (int r = 0; r < rows; ++r) s.offsets[r + 1] += s.offsets[r];
  s.col_idx.reserve(t.size());
  s.vals.reserve(t.size());
  for (const auto& [r, c, v] : t) {
    s.col_idx.push_back(c);
    s.vals.push_back(v);
  }
  std::vector<std::tuple<int, int, double>> tt;
  tt.reserve(t.size());
  for (const auto& [r, c, v] : t) tt.emplace_back(c, r, v);
  std::sort(tt.begin(), tt.end());
  s.t_offsets.assign(cols + 1, 0);
  for (const auto& tr : tt) s.t_offsets[std::get<0>(tr) + 1]++;
  for (int r = 0; r < cols; ++r) s.t_offsets[r + 1] += s.t_offsets[r];
  s.t_col_idx.reserve(tt.size());
  s.t_vals.reserve(tt.size());
  for (const auto& [r, c, v] : tt) {
    s.t_col_idx.push_back(c);
    s.t_vals.push_back(v);
  }
  return s;
}

Matrix SparseOp::apply(const Matrix& x) const {
  Matrix y = Matrix::Zero(rows, x.cols());
  for (int r = 0; r < rows; ++r) {
    for (int e = offsets[r]; e < offsets[r + 1]; ++e) {
      y.row(r) += vals[e] * x.row(col_idx[e]);
    }
  }
  return y;
}

Matrix SparseOp::apply_transpose(const Matrix& x) const {
  Matrix y = Matrix::Zero(cols, x.cols());
  for (int r = 0; r < cols; ++r) {
    for (int e = t_offsets[r]; e < t_offsets[r + 1]; ++e) {
      y.row(r) += t_vals[e] * x.row(t_col_idx[e]);
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Tape

int Tape::add_slot(Matrix v, bool requires_grad, ParamTensor* bound) {
  slots_.push_back(Slot{std::move(v), Matrix(), requires_grad, bound});
  return static_cast<int>(slots_.size()) - 1;
}

DiffTensor Tape::input(Matrix v) {
  return DiffTensor(this, add_slot(std::move(v), false, nullptr));
}

DiffTensor Tape::variable(Matrix v) {
  return DiffTensor(this, add_slot(std::move(v), true, nullptr));
}

DiffTensor Tape::param(ParamTensor& p) {
  return DiffTensor(this, add_slot(p.value, true, &p));
}

const Matrix& Tape::grad(int id) const {
  if (slots_[id].grad.size() == 0) {
    throw std::runtime_error("gradient not populated; call backward() first");
  }
  return slots_[id].grad;
}

Matrix& Tape::grad_ref(int id) {
  Slot& s = slots_[id];
  if (s.grad.size() == 0) {
    s.grad = Matrix::Zero(s.value.rows(), s.value.cols());
  }
  return s.grad;
}

DiffTensor Tape::emplace(Matrix value, OpKind kind, std::vector<int> inputs,
                         std::function<void(Tape&, int)> adjoint) {
  bool rg = false;
  for (int i : inputs) rg = rg || slots_[i].requires_grad;
  int id = add_slot(std::move(value), rg, nullptr);
  entries_.push_back(Entry{kind, std::move(inputs), id, std::move(adjoint)});
  return DiffTensor(this, id);
}

void Tape::backward(DiffTensor loss) {
  if (loss.tape() != this) {
    throw std::invalid_argument("backward: loss from another tape");
  }
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(lv));
  }
  if (entries_.empty()) {
    throw std::runtime_error("backward: tape is empty");
  }
  grad_ref(loss.id())(0, 0) += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!slots_[it->output].requires_grad) continue;
    if (slots_[it->output].grad.size() == 0) continue;  // not reachable
    it->adjoint(*this, it->output);
  }
  for (Slot& s : slots_) {
    if (s.bound != nullptr && s.grad.size() > 0) {
      if (s.bound->grad.size() == 0) {
        s.bound->grad = Matrix::Zero(s.value.rows(), s.value.cols());
      }
      s.bound->grad += s.grad;
    }
  }
  entries_.clear();
}

void Tape::reset() {
  entries_.clear();
  slots_.clear();
}

// ---------------------------------------------------------------------------
// Ops

DiffTensor matmul(DiffTensor a, DiffTensor b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shape_str(av) + " * " + shape_str(bv));
  }
  int ia = a.id(), ib = b.id();
  return t->emplace(av * bv, OpKind::kMatMul, {ia, ib},
                    [ia, ib](Tape& tp, int out) {
                      const Matrix& g = tp.grad(out);
                      if (tp.requires_grad(ia)) {
                        tp.grad_ref(ia) += g * tp.value(ib).transpose();
                      }
                      if (tp.requires_grad(ib)) {
                        tp.grad_ref(ib) += tp.value(ia).transpose() * g;
                      }
                    });
}

DiffTensor add(DiffTensor a, DiffTensor b) {
  Tape* t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  int ia = a.id(), ib = b.id();
  return t->emplace(a.value() + b.value(), OpKind::kAdd, {ia, ib},
                    [ia, ib](Tape& tp, int out) {
                      const Matrix& g = tp.grad(out);
                      if (tp.requires_grad(ia)) tp.grad_ref(ia) += g;
                      if (tp.requires_grad(ib)) tp.grad_ref(ib) += g;
                    });
}

DiffTensor add_rowvec(DiffTensor a, DiffTensor v) {
  Tape* t = common_tape(a, v);
  if (v.rows() != 1 || v.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: shape mismatch " +
                                shape_str(a.value()) + " vs " +
                                shape_str(v.value()));
  }
  int ia = a.id(), iv = v.id();
  Matrix y = a.value().rowwise() + v.value().row(0);
  return t->emplace(std::move(y), OpKind::kAddRowVec, {ia, iv},
                    [ia, iv](Tape& tp, int out) {
                      const Matrix& g = tp.grad(out);
                      if (tp.requires_grad(ia)) tp.grad_ref(ia) += g;
                      if (tp.requires_grad(iv)) {
                        tp.grad_ref(iv).row(0) += g.colwise().sum();
                      }
                    });
}

DiffTensor mul(DiffTensor a, DiffTensor b) {
  Tape* t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  int ia = a.id(), ib = b.id();
  Matrix y = a.value().cwiseProduct(b.value());
  return t->emplace(std::move(y), OpKind::kMul, {ia, ib},
                    [ia, ib](Tape& tp, int out) {
                      const Matrix& g = tp.grad(out);
                      if (tp.requires_grad(ia)) {
                        tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
                      }
                      if (tp.requires_grad(ib)) {
                        tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
                      }
                    });
}

DiffTensor mul_colvec(DiffTensor a, DiffTensor v) {
  Tape* t = common_tape(a, v);
  if (v.cols() != 1 || v.rows() != a.rows()) {
    throw std::invalid_argument("mul_colvec: shape mismatch " +
                                shape_str(a.value()) + " vs " +
                                shape_str(v.value()));
  }
  int ia = a.id(), iv = v.id();
  Matrix y = a.value().array().colwise() * v.value().col(0).array();
  return t->emplace(std::move(y), OpKind::kMulColVec, {ia, iv},
                    [ia, iv](Tape& tp, int out) {
                      const Matrix& g = tp.grad(out);
                      if (tp.requires_grad(ia)) {
                        tp.grad_ref(ia).array() +=
                            g.array().colwise() * tp.value(iv).col(0).array();
                      }
                      if (tp.requires_grad(iv)) {
                        tp.grad_ref(iv).col(0) +=
                            g.cwiseProduct(tp.value(ia)).rowwise().sum();
                      }
                    });
}

DiffTensor scale(DiffTensor a, double c) {
  int ia = a.id();
  return a.tape()->emplace(c * a.value(), OpKind::kScale, {ia},
                           [ia, c](Tape& tp, int out) {
                             tp.grad_ref(ia) += c * tp.grad(out);
                           });
}

DiffTensor leaky_relu(DiffTensor a, double slope) {
  int ia = a.id();
  Matrix y = a.value().unaryExpr(
      [slope](double x) { return x > 0.0 ? x : slope * x; });
  return a.tape()->emplace(
      std::move(y), OpKind::kLeakyRelu, {ia}, [ia, slope](Tape& tp, int out) {
        const Matrix& x = tp.value(ia);
        tp.grad_ref(ia) += tp.grad(out).cwiseProduct(x.unaryExpr(
            [slope](double v) { return v > 0.0 ? 1.0 : slope; }));
      });
}

DiffTensor relu(DiffTensor a) {
  int ia = a.id();
  Matrix y = a.value().cwiseMax(0.0);
  return a.tape()->emplace(
      std::move(y), OpKind::kRelu, {ia}, [ia](Tape& tp, int out) {
        const Matrix& x = tp.value(ia);
        tp.grad_ref(ia) += tp.grad(out).cwiseProduct(
            x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      });
}

DiffTensor elu(DiffTensor a) {
  int ia = a.id();
  Matrix y = a.value().unaryExpr(
      [](double x) { return x > 0.0 ? x : std::expm1(x); });
  return a.tape()->emplace(
      std::move(y), OpKind::kElu, {ia}, [ia](Tape& tp, int out) {
        const Matrix& x = tp.value(ia);
        tp.grad_ref(ia) += tp.grad(out).cwiseProduct(x.unaryExpr(
            [](double v) { return v > 0.0 ? 1.0 : std::exp(v); }));
      });
}

DiffTensor exp_elem(DiffTensor a) {
  int ia = a.id();
  return a.tape()->emplace(a.value().array().exp().matrix(), OpKind::kExp,
                           {ia}, [ia](Tape& tp, int out) {
                             tp.grad_ref(ia) +=
                                 tp.grad(out).cwiseProduct(tp.value(out));
                           });
}

DiffTensor sqrt_elem(DiffTensor a) {
  if ((a.value().array() < 0.0).any()) {
    throw std::domain_error("sqrt: negative entry");
  }
  int ia = a.id();
  return a.tape()->emplace(
      a.value().array().sqrt().matrix(), OpKind::kSqrt, {ia},
      [ia](Tape& tp, int out) {
        tp.grad_ref(ia).array() +=
            tp.grad(out).array() / (2.0 * tp.value(out).array());
      });
}

DiffTensor concat_cols(DiffTensor a, DiffTensor b) {
  Tape* t = common_tape(a, b);
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("concat_cols: row counts differ, " +
                                shape_str(a.value()) + " vs " +
                                shape_str(b.value()));
  }
  int ia = a.id(), ib = b.id();
  Matrix y(a.rows(), a.cols() + b.cols());
  y << a.value(), b.value();
  Eigen::Index ca = a.cols(), cb = b.cols();
  return t->emplace(std::move(y), OpKind::kConcatCols, {ia, ib},
                    [ia, ib, ca, cb](Tape& tp, int out) {
                      const Matrix& g = tp.grad(out);
                      if (tp.requires_grad(ia)) {
                        tp.grad_ref(ia) += g.leftCols(ca);
                      }
                      if (tp.requires_grad(ib)) {
                        tp.grad_ref(ib) += g.rightCols(cb);
                      }
                    });
}

DiffTensor mean_all(DiffTensor a) {
  int ia = a.id();
  double n = static_cast<double>(a.value().size());
  Matrix y(1, 1);
  y(0, 0) = a.value().mean();
  return a.tape()->emplace(std::move(y), OpKind::kMean, {ia},
                           [ia, n](Tape& tp, int out) {
                             tp.grad_ref(ia).array() +=
                                 tp.grad(out)(0, 0) / n;
                           });
}

DiffTensor sum_all(DiffTensor a) {
  int ia = a.id();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return a.tape()->emplace(std::move(y), OpKind::kSum, {ia},
                           [ia](Tape& tp, int out) {
                             tp.grad_ref(ia).array() += tp.grad(out)(0, 0);
                           });
}

DiffTensor layer_norm(DiffTensor x, DiffTensor gain, DiffTensor bias,
                      double eps) {
  Tape* t = common_tape(x, gain);
  common_tape(x, bias);
  const Matrix& xv = x.value();
  if (gain.rows() != 1 || gain.cols() != xv.cols() || bias.rows() != 1 ||
      bias.cols() != xv.cols()) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1x" +
                                std::to_string(xv.cols()));
  }
  Eigen::Index n = xv.cols();
  Vector mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  Vector var = centered.array().square().rowwise().mean();
  Vector inv_std = (var.array() + eps).sqrt().inverse();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
             bias.value().row(0).array();
  int ix = x.id(), ig = gain.id(), ib = bias.id();
  auto xhat_p = std::make_shared<Matrix>(std::move(xhat));
  auto istd_p = std::make_shared<Vector>(std::move(inv_std));
  return t->emplace(
      std::move(y), OpKind::kLayerNorm, {ix, ig, ib},
      [ix, ig, ib, xhat_p, istd_p, n](Tape& tp, int out) {
        const Matrix& g = tp.grad(out);
        const Matrix& xh = *xhat_p;
        if (tp.requires_grad(ig)) {
          tp.grad_ref(ig).row(0) += g.cwiseProduct(xh).colwise().sum();
        }
        if (tp.requires_grad(ib)) {
          tp.grad_ref(ib).row(0) += g.colwise().sum();
        }
        if (tp.requires_grad(ix)) {
          Matrix h = g.array().rowwise() * tp.value(ig).row(0).array();
          Vector mean_h = h.rowwise().mean();
          Vector mean_hx = h.cwiseProduct(xh).rowwise().mean();
          Matrix dx = ((h.colwise() - mean_h) -
                       (xh.array().colwise() * mean_hx.array()).matrix())
                          .array()
                          .colwise() *
                      istd_p->array();
          tp.grad_ref(ix) += dx;
        }
        (void)n;
      });
}

namespace {

DiffTensor softmax_rows_impl(DiffTensor x,
                             const std::vector<std::uint8_t>* mask) {
  const Matrix& xv = x.value();
  Eigen::Index m = xv.rows(), n = xv.cols();
  if (mask != nullptr &&
      static_cast<Eigen::Index>(mask->size()) != m * n) {
    throw std::invalid_argument("softmax_rows: mask size mismatch");
  }
  Matrix y = Matrix::Zero(m, n);
  for (Eigen::Index r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < n; ++c) {
      if (mask == nullptr || (*mask)[r * n + c]) mx = std::max(mx, xv(r, c));
    }
    if (!std::isfinite(mx)) {
      throw std::runtime_error("softmax_rows: fully masked row " +
                               std::to_string(r));
    }
    double s = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      if (mask == nullptr || (*mask)[r * n + c]) {
        y(r, c) = std::exp(xv(r, c) - mx);
        s += y(r, c);
      }
    }
    y.row(r) /= s;
  }
  int ix = x.id();
  return x.tape()->emplace(std::move(y), OpKind::kSoftmaxRows, {ix},
                           [ix](Tape& tp, int out) {
                             const Matrix& g = tp.grad(out);
                             const Matrix& yv = tp.value(out);
                             Vector dot =
                                 g.cwiseProduct(yv).rowwise().sum();
                             tp.grad_ref(ix) += yv.cwiseProduct(
                                 g.colwise() - dot);
                           });
}

}  // namespace

DiffTensor softmax_rows(DiffTensor x) { return softmax_rows_impl(x, nullptr); }

DiffTensor softmax_rows(DiffTensor x, const std::vector<std::uint8_t>& mask) {
  return softmax_rows_impl(x, &mask);
}

DiffTensor nll_loss(DiffTensor logits, std::vector<int> rows,
                    std::vector<int> labels) {
  if (rows.size() != labels.size()) {
    throw std::invalid_argument("nll_loss: rows/labels length mismatch");
  }
  if (rows.empty()) {
    throw std::invalid_argument("nll_loss: no rows selected");
  }
  const Matrix& xv = logits.value();
  Eigen::Index c = xv.cols();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows() || labels[i] < 0 || labels[i] >= c) {
      throw std::out_of_range("nll_loss: row or label out of range");
    }
  }
  double count = static_cast<double>(rows.size());
  auto probs = std::make_shared<Matrix>(rows.size(), c);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Eigen::RowVectorXd row = xv.row(rows[i]);
    double mx = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - mx).exp();
    double s = e.sum();
    probs->row(static_cast<Eigen::Index>(i)) = e / s;
    loss += (mx + std::log(s)) - row(labels[i]);
  }
  Matrix y(1, 1);
  y(0, 0) = loss / count;
  int ix = logits.id();
  auto rows_p = std::make_shared<std::vector<int>>(std::move(rows));
  auto labels_p = std::make_shared<std::vector<int>>(std::move(labels));
  return logits.tape()->emplace(
      std::move(y), OpKind::kNllLoss, {ix},
      [ix, rows_p, labels_p, probs, count](Tape& tp, int out) {
        double g = tp.grad(out)(0, 0) / count;
        Matrix& gx = tp.grad_ref(ix);
        for (std::size_t i = 0; i < rows_p->size(); ++i) {
          gx.row((*rows_p)[i]) +=
              g * probs->row(static_cast<Eigen::Index>(i));
          gx((*rows_p)[i], (*labels_p)[i]) -= g;
        }
      });
}

DiffTensor gather_rows(DiffTensor x, std::vector<int> idx) {
  const Matrix& xv = x.value();
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= static_cast<int>(xv.rows())) {
      throw std::out_of_range("gather_rows: index out of range");
    }
    if (idx[r] >= 0) y.row(static_cast<Eigen::Index>(r)) = xv.row(idx[r]);
  }
  int ix = x.id();
  auto idx_p = std::make_shared<std::vector<int>>(std::move(idx));
  return x.tape()->emplace(std::move(y), OpKind::kGatherRows, {ix},
                           [ix, idx_p](Tape& tp, int out) {
                             const Matrix& g = tp.grad(out);
                             Matrix& gx = tp.grad_ref(ix);
                             for (std::size_t r = 0; r < idx_p->size(); ++r) {
                               if ((*idx_p)[r] >= 0) {
                                 gx.row((*idx_p)[r]) +=
                                     g.row(static_cast<Eigen::Index>(r));
                               }
                             }
                           });
}

DiffTensor segment_sum_rows(DiffTensor x, std::vector<int> offsets) {
  const Matrix& xv = x.value();
  if (offsets.empty() || offsets.front() != 0 ||
      offsets.back() != xv.rows()) {
    throw std::invalid_argument("segment_sum_rows: bad offsets");
  }
  Eigen::Index s = static_cast<Eigen::Index>(offsets.size()) - 1;
  Matrix y = Matrix::Zero(s, xv.cols());
  for (Eigen::Index i = 0; i < s; ++i) {
    for (int r = offsets[i]; r < offsets[i + 1]; ++r) y.row(i) += xv.row(r);
  }
  int ix = x.id();
  auto off_p = std::make_shared<std::vector<int>>(std::move(offsets));
  return x.tape()->emplace(
      std::move(y), OpKind::kSegmentSumRows, {ix},
      [ix, off_p](Tape& tp, int out) {
        const Matrix& g = tp.grad(out);
        Matrix& gx = tp.grad_ref(ix);
        for (std::size_t i = 0; i + 1 < off_p->size(); ++i) {
          for (int r = (*off_p)[i]; r < (*off_p)[i + 1]; ++r) {
            gx.row(r) += g.row(static_cast<Eigen::Index>(i));
          }
        }
      });
}

DiffTensor segment_softmax(DiffTensor e, std::vector<int> offsets) {
  const Matrix& ev = e.value();
  if (ev.cols() != 1) {
    throw std::invalid_argument("segment_softmax: expects a column vector");
  }
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != ev.rows()) {
    throw std::invalid_argument("segment_softmax: bad offsets");
  }
  Matrix y(ev.rows(), 1);
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    int lo = offsets[i], hi = offsets[i + 1];
    if (lo == hi) continue;
    double mx = ev.col(0).segment(lo, hi - lo).maxCoeff();
    double s = 0.0;
    for (int r = lo; r < hi; ++r) {
      y(r, 0) = std::exp(ev(r, 0) - mx);
      s += y(r, 0);
    }
    for (int r = lo; r < hi; ++r) y(r, 0) /= s;
  }
  int ie = e.id();
  auto off_p = std::make_shared<std::vector<int>>(std::move(offsets));
  return e.tape()->emplace(
      std::move(y), OpKind::kSegmentSoftmax, {ie},
      [ie, off_p](Tape& tp, int out) {
        const Matrix& g = tp.grad(out);
        const Matrix& yv = tp.value(out);
        Matrix& ge = tp.grad_ref(ie);
        for (std::size_t i = 0; i + 1 < off_p->size(); ++i) {
          int lo = (*off_p)[i], hi = (*off_p)[i + 1];
          if (lo == hi) continue;
          double dot = 0.0;
          for (int r = lo; r < hi; ++r) dot += g(r, 0) * yv(r, 0);
          for (int r = lo; r < hi; ++r) {
            ge(r, 0) += yv(r, 0) * (g(r, 0) - dot);
          }
        }
      });
}

DiffTensor block_sdpa(DiffTensor q, DiffTensor k, DiffTensor v, int block_rows,
                      std::vector<std::uint8_t> key_mask, double scale,
                      Matrix* attn) {
  Tape* t = common_tape(q, k);
  common_tape(q, v);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (qv.rows() != kv.rows() || qv.rows() != vv.rows() ||
      qv.cols() != kv.cols()) {
    throw std::invalid_argument("block_sdpa: dimension mismatch");
  }
  if (block_rows <= 0 || qv.rows() % block_rows != 0) {
    throw std::invalid_argument("block_sdpa: rows not divisible by block");
  }
  if (static_cast<Eigen::Index>(key_mask.size()) != qv.rows()) {
    throw std::invalid_argument("block_sdpa: key_mask size mismatch");
  }
  int nblocks = static_cast<int>(qv.rows()) / block_rows;
  auto probs = std::make_shared<Matrix>(qv.rows(), block_rows);
  Matrix y(qv.rows(), vv.cols());
  for (int b = 0; b < nblocks; ++b) {
    int base = b * block_rows;
    bool any = false;
    for (int r = 0; r < block_rows; ++r) any = any || key_mask[base + r];
    if (!any) {
      throw std::runtime_error("block_sdpa: all keys masked in block " +
                               std::to_string(b));
    }
    Matrix s = scale * qv.middleRows(base, block_rows) *
               kv.middleRows(base, block_rows).transpose();
    for (int r = 0; r < block_rows; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < block_rows; ++c) {
        if (key_mask[base + c]) mx = std::max(mx, s(r, c));
      }
      double z = 0.0;
      for (int c = 0; c < block_rows; ++c) {
        double p = key_mask[base + c] ? std::exp(s(r, c) - mx) : 0.0;
        (*probs)(base + r, c) = p;
        z += p;
      }
      probs->row(base + r) /= z;
    }
    y.middleRows(base, block_rows) =
        probs->middleRows(base, block_rows) * vv.middleRows(base, block_rows);
  }
  if (attn != nullptr) *attn = *probs;
  int iq = q.id(), ik = k.id(), iv = v.id();
  return t->emplace(
      std::move(y), OpKind::kBlockSdpa, {iq, ik, iv},
      [iq, ik, iv, probs, block_rows, nblocks, scale](Tape& tp, int out) {
        const Matrix& g = tp.grad(out);
        const Matrix& qv2 = tp.value(iq);
        const Matrix& kv2 = tp.value(ik);
        const Matrix& vv2 = tp.value(iv);
        for (int b = 0; b < nblocks; ++b) {
          int base = b * block_rows;
          auto p = probs->middleRows(base, block_rows);
          auto gy = g.middleRows(base, block_rows);
          if (tp.requires_grad(iv)) {
            tp.grad_ref(iv).middleRows(base, block_rows) +=
                p.transpose() * gy;
          }
          Matrix dp = gy * vv2.middleRows(base, block_rows).transpose();
          Vector dot = dp.cwiseProduct(p).rowwise().sum();
          Matrix ds = p.cwiseProduct(dp.colwise() - dot);
          if (tp.requires_grad(iq)) {
            tp.grad_ref(iq).middleRows(base, block_rows) +=
                scale * ds * kv2.middleRows(base, block_rows);
          }
          if (tp.requires_grad(ik)) {
            tp.grad_ref(ik).middleRows(base, block_rows) +=
                scale * ds.transpose() * qv2.middleRows(base, block_rows);
          }
        }
      });
}

DiffTensor segment_weighted_sum(DiffTensor x, DiffTensor lambda, int block_rows,
                                std::vector<std::uint8_t> mask) {
  Tape* t = common_tape(x, lambda);
  const Matrix& xv = x.value();
  const Matrix& lv = lambda.value();
  if (lv.cols() != 1 || lv.rows() != block_rows) {
    throw std::invalid_argument("segment_weighted_sum: lambda must be " +
                                std::to_string(block_rows) + "x1");
  }
  if (block_rows <= 0 || xv.rows() % block_rows != 0 ||
      static_cast<Eigen::Index>(mask.size()) != xv.rows()) {
    throw std::invalid_argument("segment_weighted_sum: bad block layout");
  }
  int nblocks = static_cast<int>(xv.rows()) / block_rows;
  Matrix y = Matrix::Zero(nblocks, xv.cols());
  for (int b = 0; b < nblocks; ++b) {
    for (int r = 0; r < block_rows; ++r) {
      if (mask[b * block_rows + r]) {
        y.row(b) += lv(r, 0) * xv.row(b * block_rows + r);
      }
    }
  }
  int ix = x.id(), il = lambda.id();
  auto mask_p = std::make_shared<std::vector<std::uint8_t>>(std::move(mask));
  return t->emplace(
      std::move(y), OpKind::kSegmentWeightedSum, {ix, il},
      [ix, il, mask_p, block_rows, nblocks](Tape& tp, int out) {
        const Matrix& g = tp.grad(out);
        const Matrix& xv2 = tp.value(ix);
        const Matrix& lv2 = tp.value(il);
        for (int b = 0; b < nblocks; ++b) {
          for (int r = 0; r < block_rows; ++r) {
            if (!(*mask_p)[b * block_rows + r]) continue;
            if (tp.requires_grad(ix)) {
              tp.grad_ref(ix).row(b * block_rows + r) +=
                  lv2(r, 0) * g.row(b);
            }
            if (tp.requires_grad(il)) {
              tp.grad_ref(il)(r, 0) +=
                  xv2.row(b * block_rows + r).dot(g.row(b));
            }
          }
        }
      });
}

DiffTensor spmm(std::shared_ptr<const SparseOp> a, DiffTensor h) {
  const Matrix& hv = h.value();
  if (a->cols != hv.rows()) {
    throw std::invalid_argument("spmm: dimension mismatch");
  }
  int ih = h.id();
  return h.tape()->emplace(a->apply(hv), OpKind::kSpmm, {ih},
                           [ih, a](Tape& tp, int out) {
                             tp.grad_ref(ih) +=
                                 a->apply_transpose(tp.grad(out));
                           });
}

DiffTensor dropout(DiffTensor x, double rate, bool training,
                   std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  }
  if (!training || rate == 0.0) return x;
  const Matrix& xv = x.value();
  double keep = 1.0 - rate;
  auto mask = std::make_shared<Matrix>(xv.rows(), xv.cols());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index c = 0; c < xv.cols(); ++c) {
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      (*mask)(r, c) = u(rng) < keep ? 1.0 / keep : 0.0;
    }
  }
  int ix = x.id();
  return x.tape()->emplace(xv.cwiseProduct(*mask), OpKind::kDropout, {ix},
                           [ix, mask](Tape& tp, int out) {
                             tp.grad_ref(ix) +=
                                 tp.grad(out).cwiseProduct(*mask);
                           });
}

}  // namespace edgeforge
