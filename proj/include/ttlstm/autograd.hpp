#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ttlstm/tensor.hpp"

namespace ttlstm {

/// A trainable tensor and its accumulated gradient.
struct Parameter {
  std::string name;
  DenseTensor value;
  DenseTensor grad;

  Parameter() = default;
  Parameter(std::string name, DenseTensor value);

  void zero_grad();
  std::size_t size() const { return value.size(); }
};

namespace ag {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape over a static per-step graph. Single-owner.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf with no gradient.
  Var constant(Matrix value);
  /// Leaf bound to a parameter, viewed as rows x cols (row-major reshape).
  Var parameter(Parameter& p, std::size_t rows, std::size_t cols);
  /// Interior node; `inputs` decide whether it needs a gradient at all.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first use.
  Matrix& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_.at(id).grad.size() > 0; }

  /// Adds `delta` into the gradient of `id` when that node requires one.
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& delta) {
    if (!nodes_[id].requires_grad) return;
    grad(id) += delta;
  }

  /// Runs reverse traversal from a 1x1 loss. Each recorded op is visited
  /// once, in reverse record order. Can run once per tape.
  void backward(Var loss, double seed = 1.0);

  /// Adds leaf gradients into the bound Parameter::grad buffers.
  void flush_parameter_grads();

  /// Gradient of the leaves bound to `p`, summed over every binding; zeros
  /// when unused.
  DenseTensor parameter_grad(const Parameter& p) const;

  std::size_t size() const { return nodes_.size(); }
  bool backpropagated() const { return done_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool done_ = false;
};

// Differentiable operations. Matrices are row-major; "rows" are batch items.
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a + row broadcast over every row of a; `row` is 1 x cols.
Var add_row(Var a, Var row);
Var sigmoid(Var a);
Var tanh(Var a);
Var slice_cols(Var a, std::size_t first, std::size_t count);
Var slice_rows(Var a, std::size_t first, std::size_t count);
Var concat_rows(std::span<const Var> parts);
/// Row gather from a table: out.row(k) = table.row(ids[k]).
Var embedding(Var table, std::span<const int> ids);
/// out(i, j) = flat(a)[row_offset[i] + col_offset[j]].
Var gather(Var a, std::span<const std::size_t> row_offset, std::span<const std::size_t> col_offset);
/// Per-row layer normalization applied independently to each contiguous
/// block of `block` columns; gain and bias are 1 x cols.
Var layer_norm_blocks(Var x, Var gain, Var bias, std::size_t block, double eps);
Var sum(Var a);
Var sum_squares(Var a);
/// Mean negative log-likelihood over rows.
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Central-difference check of every entry of `params` against reverse mode.
/// `build_loss` records the scalar loss on the given tape.
/// Error metric: |analytic - numeric| / max(1e-8, |numeric|).
GradCheckResult grad_check(std::span<Parameter* const> params,
                           const std::function<Var(Tape&)>& build_loss, double tolerance,
                           double h = 1e-5);

}  // namespace ag
}  // namespace ttlstm
