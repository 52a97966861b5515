#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <tuple>
#include <vector>

namespace edgeforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid until the
/// owning tape is reset.
class DiffTensor {
 public:
  DiffTensor() = default;

  Eigen::Index rows() const;
  Eigen::Index cols() const;
  const Matrix& value() const;
  /// Gradient of the last backward() pass. Throws if none was populated.
  const Matrix& grad() const;
  bool has_grad() const;

  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  DiffTensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Named trainable tensor. Tape::backward accumulates into `grad`;
/// it stays empty (0x0) until then.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Constant sparse matrix in CSR form, with its transpose, for graph
/// aggregation ops. Values are fixed at construction (not differentiated).
struct SparseOp {
  int rows = 0;
  int cols = 0;
  std::vector<int> offsets;
  std::vector<int> col_idx;
  std::vector<double> vals;
  std::vector<int> t_offsets;
  std::vector<int> t_col_idx;
  std::vector<double> t_vals;

  static SparseOp from_triplets(int rows, int cols,
                                std::vector<std::tuple<int, int, double>> t);
  Matrix apply(const Matrix& x) const;
  Matrix apply_transpose(const Matrix& x) const;
};

enum class OpKind {
  kInput,
  kParam,
  kMatMul,
  kAdd,
  kAddRowVec,
  kMul,
  kMulColVec,
  kScale,
  kLeakyRelu,
  kRelu,
  kElu,
  kExp,
  kSqrt,
  kConcatCols,
  kMean,
  kSum,
  kLayerNorm,
  kSoftmaxRows,
  kNllLoss,
  kGatherRows,
  kSegmentSumRows,
  kSegmentSoftmax,
  kBlockSdpa,
  kSegmentWeightedSum,
  kSpmm,
  kDropout,
};

/// Reverse-mode computation tape. Single-threaded; operations are recorded
/// in topological order and adjoints replayed in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a constant value (no gradient).
  DiffTensor input(Matrix v);
  /// Leaf with a gradient buffer (for gradient checks on raw inputs).
  DiffTensor variable(Matrix v);
  /// Leaf bound to a ParamTensor; backward() flushes its gradient there.
  DiffTensor param(ParamTensor& p);

  /// Reverse sweep from a scalar loss. Populates gradients of every
  /// reachable tensor, flushes parameter gradients, and clears the op list
  /// so the tape can record a fresh graph. Recorded values (and their
  /// gradients) stay readable until reset().
  void backward(DiffTensor loss);

  /// Drops all recorded state.
  void reset();

  std::size_t num_ops() const { return entries_.size(); }
  std::size_t num_slots() const { return slots_.size(); }
  OpKind op_kind(std::size_t entry) const { return entries_[entry].kind; }
  const std::vector<int>& op_inputs(std::size_t entry) const {
    return entries_[entry].inputs;
  }
  int op_output(std::size_t entry) const { return entries_[entry].output; }

  const Matrix& value(int id) const { return slots_[id].value; }
  bool requires_grad(int id) const { return slots_[id].requires_grad; }
  bool has_grad(int id) const { return slots_[id].grad.size() > 0; }
  const Matrix& grad(int id) const;
  /// Gradient accumulator, zero-initialized to the value's shape on first use.
  Matrix& grad_ref(int id);

  /// Records a non-leaf op. The adjoint receives the output slot id; it is
  /// skipped when no input needs gradients.
  DiffTensor emplace(Matrix value, OpKind kind, std::vector<int> inputs,
                     std::function<void(Tape&, int)> adjoint);

 private:
  struct Slot {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    ParamTensor* bound = nullptr;
  };
  struct Entry {
    OpKind kind;
    std::vector<int> inputs;
    int output;
    std::function<void(Tape&, int)> adjoint;
  };

  int add_slot(Matrix v, bool requires_grad, ParamTensor* bound);

  std::vector<Slot> slots_;
  std::vector<Entry> entries_;
};

// Op library. Each function validates shapes, records the forward value on
// the operands' tape and registers the adjoint.

DiffTensor matmul(DiffTensor a, DiffTensor b);
DiffTensor add(DiffTensor a, DiffTensor b);
/// a [m x n] + v [1 x n] broadcast over rows.
DiffTensor add_rowvec(DiffTensor a, DiffTensor v);
DiffTensor mul(DiffTensor a, DiffTensor b);
/// Rows of a [m x n] scaled by v [m x 1].
DiffTensor mul_colvec(DiffTensor a, DiffTensor v);
DiffTensor scale(DiffTensor a, double c);
DiffTensor leaky_relu(DiffTensor a, double slope);
DiffTensor relu(DiffTensor a);
DiffTensor elu(DiffTensor a);
DiffTensor exp_elem(DiffTensor a);
DiffTensor sqrt_elem(DiffTensor a);
DiffTensor concat_cols(DiffTensor a, DiffTensor b);
DiffTensor mean_all(DiffTensor a);
DiffTensor sum_all(DiffTensor a);
/// Row-wise layer norm with learnable gain/bias [1 x n].
DiffTensor layer_norm(DiffTensor x, DiffTensor gain, DiffTensor bias,
                      double eps = 1e-5);
DiffTensor softmax_rows(DiffTensor x);
/// Masked variant; `mask` is row-major m*n, false entries get exactly 0.
/// A fully masked row is an error.
DiffTensor softmax_rows(DiffTensor x, const std::vector<std::uint8_t>& mask);
/// Mean negative log softmax(logits)[r, labels[r]] over the listed rows.
DiffTensor nll_loss(DiffTensor logits, std::vector<int> rows,
                    std::vector<int> labels);
/// y[r, :] = x[idx[r], :]; idx -1 yields a zero row (padding).
DiffTensor gather_rows(DiffTensor x, std::vector<int> idx);
/// Sums contiguous row ranges [offsets[s], offsets[s+1]).
DiffTensor segment_sum_rows(DiffTensor x, std::vector<int> offsets);
/// Softmax over each contiguous row range of a column vector.
DiffTensor segment_softmax(DiffTensor e, std::vector<int> offsets);
/// Scaled dot-product attention applied independently to every block of
/// `block_rows` consecutive rows. `key_mask` (one flag per row) disables
/// padded keys; an all-masked block is an error. When `attn` is non-null it
/// receives the stacked softmax matrices [(B*block_rows) x block_rows].
DiffTensor block_sdpa(DiffTensor q, DiffTensor k, DiffTensor v, int block_rows,
                      std::vector<std::uint8_t> key_mask, double scale,
                      Matrix* attn = nullptr);
/// y[b, :] = sum_r mask[b*M+r] * lambda[r] * x[b*M+r, :].
DiffTensor segment_weighted_sum(DiffTensor x, DiffTensor lambda, int block_rows,
                                std::vector<std::uint8_t> mask);
DiffTensor spmm(std::shared_ptr<const SparseOp> a, DiffTensor h);
/// Inverted dropout: scales survivors by 1/(1-rate) in training, identity in
/// eval. Consumes `rng` at record time.
DiffTensor dropout(DiffTensor x, double rate, bool training,
                   std::mt19937_64& rng);

inline void backward(DiffTensor loss) { loss.tape()->backward(loss); }

}  // namespace edgeforge
