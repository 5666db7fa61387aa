#include "ttlstm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ttlstm/error.hpp"

namespace ttlstm {

Parameter::Parameter(std::string n, DenseTensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.dims(), 0.0) {}

void Parameter::zero_grad() {
  if (grad.dims() != value.dims()) grad = DenseTensor(value.dims(), 0.0);
  std::fill(grad.data().begin(), grad.data().end(), 0.0);
}

namespace ag {

using Index = Eigen::Index;

const Matrix& Var::value() const {
  if (!tape) throw StateError("variable is not bound to a tape");
  return tape->value(id);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p, std::size_t rows, std::size_t cols) {
  Matrix v = p.value.as_matrix(rows, cols);
  nodes_.push_back(Node{std::move(v), {}, {}, &p, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  if (done_) throw StateError("cannot record on a tape after backward");
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape != this) throw StateError("operands belong to different tapes");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

Matrix& Tape::grad(std::size_t id) {
  auto& node = nodes_.at(id);
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(Var loss, double seed) {
  if (nodes_.empty()) throw StateError("backward called before any forward pass was recorded");
  if (done_) throw StateError("backward already ran on this tape");
  if (loss.tape != this) throw StateError("loss belongs to a different tape");
  const auto& lv = nodes_.at(loss.id).value;
  if (lv.rows() != 1 || lv.cols() != 1) throw StateError("backward needs a scalar (1x1) loss");
  done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)(0, 0) += seed;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
    node.backward(*this, id);
  }
}

void Tape::flush_parameter_grads() {
  for (auto& node : nodes_) {
    if (!node.param || node.grad.size() == 0) continue;
    auto& g = node.param->grad;
    if (g.dims() != node.param->value.dims()) g = DenseTensor(node.param->value.dims(), 0.0);
    auto dst = g.data();
    const double* src = node.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

DenseTensor Tape::parameter_grad(const Parameter& p) const {
  DenseTensor out(p.value.dims(), 0.0);
  auto dst = out.data();
  for (const auto& node : nodes_) {
    if (node.param != &p || node.grad.size() == 0) continue;
    const double* src = node.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  return out;
}

namespace {

void same_tape(Var a, Var b) {
  if (!a.tape || a.tape != b.tape) throw StateError("operands belong to different tapes");
}

void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + " differ");
}

}  // namespace

Var matmul(Var a, Var b, bool ta, bool tb) {
  same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Index inner_a = ta ? av.rows() : av.cols();
  const Index inner_b = tb ? bv.cols() : bv.rows();
  if (inner_a != inner_b) throw ShapeError("matmul: inner extents differ");
  Matrix out;
  if (!ta && !tb) out.noalias() = av * bv;
  else if (ta && !tb) out.noalias() = av.transpose() * bv;
  else if (!ta && tb) out.noalias() = av * bv.transpose();
  else out.noalias() = av.transpose() * bv.transpose();
  return a.tape->record(std::move(out), {a, b}, [a, b, ta, tb](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      if (!ta && !tb) t.grad(a.id).noalias() += g * bv.transpose();
      else if (ta && !tb) t.grad(a.id).noalias() += bv * g.transpose();
      else if (!ta && tb) t.grad(a.id).noalias() += g * bv;
      else t.grad(a.id).noalias() += bv.transpose() * g.transpose();
    }
    if (t.requires_grad(b.id)) {
      if (!ta && !tb) t.grad(b.id).noalias() += av.transpose() * g;
      else if (ta && !tb) t.grad(b.id).noalias() += av * g;
      else if (!ta && tb) t.grad(b.id).noalias() += g.transpose() * av;
      else t.grad(b.id).noalias() += g.transpose() * av.transpose();
    }
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Matrix& av = a.value();
  if (static_cast<std::size_t>(av.size()) != rows * cols) throw ShapeError("reshape: size mismatch");
  Matrix out = ConstMatrixMap(av.data(), static_cast<Index>(rows), static_cast<Index>(cols));
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    MatrixMap(ga.data(), ga.rows(), ga.cols()) +=
        ConstMatrixMap(g.data(), ga.rows(), ga.cols());
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    t.accumulate(a.id, t.grad(self).transpose());
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad(a.id) += g.cwiseProduct(t.value(b.id));
    if (t.requires_grad(b.id)) t.grad(b.id) += g.cwiseProduct(t.value(a.id));
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    t.accumulate(a.id, t.grad(self) * s);
  });
}

Var add_row(Var a, Var row) {
  same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw ShapeError("add_row: row must be 1 x cols");
  Matrix out = av.rowwise() + rv.row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a.id, g);
    if (t.requires_grad(row.id)) t.grad(row.id) += g.colwise().sum();
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& s = t.value(self);
    t.accumulate(a.id, t.grad(self).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    t.accumulate(a.id, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var slice_cols(Var a, std::size_t first, std::size_t count) {
  const Matrix& av = a.value();
  if (first + count > static_cast<std::size_t>(av.cols())) throw ShapeError("slice_cols: out of range");
  Matrix out = av.middleCols(static_cast<Index>(first), static_cast<Index>(count));
  return a.tape->record(std::move(out), {a}, [a, first, count](Tape& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    t.grad(a.id).middleCols(static_cast<Index>(first), static_cast<Index>(count)) += t.grad(self);
  });
}

Var slice_rows(Var a, std::size_t first, std::size_t count) {
  const Matrix& av = a.value();
  if (first + count > static_cast<std::size_t>(av.rows())) throw ShapeError("slice_rows: out of range");
  Matrix out = av.middleRows(static_cast<Index>(first), static_cast<Index>(count));
  return a.tape->record(std::move(out), {a}, [a, first, count](Tape& t, std::size_t self) {
    if (!t.requires_grad(a.id)) return;
    t.grad(a.id).middleRows(static_cast<Index>(first), static_cast<Index>(count)) += t.grad(self);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  Tape* tape = parts.front().tape;
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.tape != tape) throw StateError("operands belong to different tapes");
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape->record(std::move(out), parts, [inputs](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Index at = 0;
    for (const auto& p : inputs) {
      const Index r = t.value(p.id).rows();
      if (t.requires_grad(p.id)) t.grad(p.id) += g.middleRows(at, r);
      at += r;
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= tv.rows())
      throw IndexError("embedding id " + std::to_string(ids[k]) + " outside the table");
    out.row(static_cast<Index>(k)) = tv.row(ids[k]);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [table, saved](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad(table.id);
    for (std::size_t k = 0; k < saved.size(); ++k) gt.row(saved[k]) += g.row(static_cast<Index>(k));
  });
}

Var gather(Var a, std::span<const std::size_t> row_offset, std::span<const std::size_t> col_offset) {
  const Matrix& av = a.value();
  const double* src = av.data();
  const auto n = static_cast<std::size_t>(av.size());
  Matrix out(static_cast<Index>(row_offset.size()), static_cast<Index>(col_offset.size()));
  for (std::size_t i = 0; i < row_offset.size(); ++i)
    for (std::size_t j = 0; j < col_offset.size(); ++j) {
      const auto off = row_offset[i] + col_offset[j];
      if (off >= n) throw IndexError("gather offset outside the source");
      out(static_cast<Index>(i), static_cast<Index>(j)) = src[off];
    }
  std::vector<std::size_t> rows(row_offset.begin(), row_offset.end());
  std::vector<std::size_t> cols(col_offset.begin(), col_offset.end());
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    double* dst = t.grad(a.id).data();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j)
        dst[rows[i] + cols[j]] += g(static_cast<Index>(i), static_cast<Index>(j));
  });
}

Var layer_norm_blocks(Var x, Var gain, Var bias, std::size_t block, double eps) {
  same_tape(x, gain);
  same_tape(x, bias);
  const Matrix& xv = x.value();
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  const Index cols = xv.cols();
  if (block == 0 || cols % static_cast<Index>(block) != 0)
    throw ShapeError("layer_norm: width is not a multiple of the block size");
  if (gv.rows() != 1 || gv.cols() != cols || bv.rows() != 1 || bv.cols() != cols)
    throw ShapeError("layer_norm: gain/bias must be 1 x width");
  if (!(eps >= 0)) throw DomainError("layer_norm: epsilon must be non-negative");

  const Index rows = xv.rows();
  const Index nb = cols / static_cast<Index>(block);
  const Index bs = static_cast<Index>(block);
  Matrix normalized(rows, cols);
  Matrix inv_std(rows, nb);
  for (Index r = 0; r < rows; ++r)
    for (Index b = 0; b < nb; ++b) {
      const auto seg = xv.row(r).segment(b * bs, bs);
      const double mean = seg.mean();
      const double var = (seg.array() - mean).square().mean();
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std(r, b) = is;
      normalized.row(r).segment(b * bs, bs) = (seg.array() - mean) * is;
    }
  Matrix out = normalized.array().rowwise() * gv.row(0).array();
  out.rowwise() += bv.row(0);

  return x.tape->record(std::move(out), {x, gain, bias},
                        [x, gain, bias, bs, nb, normalized = std::move(normalized),
                         inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& gv = t.value(gain.id);
    if (t.requires_grad(gain.id)) t.grad(gain.id) += g.cwiseProduct(normalized).colwise().sum();
    if (t.requires_grad(bias.id)) t.grad(bias.id) += g.colwise().sum();
    if (!t.requires_grad(x.id)) return;
    Matrix& gx = t.grad(x.id);
    const Index rows = g.rows();
    for (Index r = 0; r < rows; ++r)
      for (Index b = 0; b < nb; ++b) {
        const Eigen::ArrayXd dxh = (g.row(r).segment(b * bs, bs).array() *
                                    gv.row(0).segment(b * bs, bs).array()).transpose();
        const Eigen::ArrayXd xh = normalized.row(r).segment(b * bs, bs).array().transpose();
        const double m1 = dxh.mean();
        const double m2 = (dxh * xh).mean();
        gx.row(r).segment(b * bs, bs).array() += (inv_std(r, b) * (dxh - m1 - xh * m2)).transpose();
      }
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    if (t.requires_grad(a.id)) t.grad(a.id).array() += t.grad(self)(0, 0);
  });
}

Var sum_squares(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    t.accumulate(a.id, 2.0 * t.grad(self)(0, 0) * t.value(a.id));
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& lv = logits.value();
  if (static_cast<std::size_t>(lv.rows()) != targets.size())
    throw ShapeError("cross entropy: one target per row required");
  if (!lv.allFinite()) throw NumericError("cross entropy: non-finite logits");
  const Index rows = lv.rows();
  Matrix probs(rows, lv.cols());
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= lv.cols()) throw IndexError("cross entropy: target id out of range");
    const double mx = lv.row(r).maxCoeff();
    probs.row(r) = (lv.row(r).array() - mx).exp().matrix();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += std::log(z) + mx - lv(r, tgt);
  }
  Matrix out(1, 1);
  out(0, 0) = rows ? total / static_cast<double>(rows) : 0.0;
  std::vector<int> saved(targets.begin(), targets.end());
  return logits.tape->record(std::move(out), {logits},
                             [logits, saved, probs = std::move(probs)](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0) / static_cast<double>(saved.size());
    Matrix& gl = t.grad(logits.id);
    gl += g * probs;
    for (std::size_t r = 0; r < saved.size(); ++r) gl(static_cast<Index>(r), saved[r]) -= g;
  });
}

GradCheckResult grad_check(std::span<Parameter* const> params,
                           const std::function<Var(Tape&)>& build_loss, double tolerance,
                           double h) {
  std::size_t total = 0;
  for (auto* p : params) total += p->size();
  if (total > 10000) throw DomainError("grad_check: more than 1e4 parameters");
  GradCheckResult res;
  if (total == 0) return res;

  std::vector<DenseTensor> analytic;
  {
    Tape tape;
    Var loss = build_loss(tape);
    if (!std::isfinite(loss.value()(0, 0))) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
    for (auto* p : params) analytic.push_back(tape.parameter_grad(*p));
  }
  auto eval = [&]() {
    Tape tape;
    const double v = build_loss(tape).value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi]->value.data();
    const auto grads = analytic[pi].data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double orig = values[k];
      values[k] = orig + h;
      const double up = eval();
      values[k] = orig - h;
      const double down = eval();
      values[k] = orig;
      const double numeric = (up - down) / (2 * h);
      if (!std::isfinite(grads[k])) throw NumericError("grad_check: non-finite analytic gradient");
      const double err = std::abs(grads[k] - numeric) / std::max(1e-8, std::abs(numeric));
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  res.passed = res.max_rel_error < tolerance;
  return res;
}

}  // namespace ag
}  // namespace ttlstm
