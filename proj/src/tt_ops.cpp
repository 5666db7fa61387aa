#include "ttlstm/tt_ops.hpp"

#include "ttlstm/error.hpp"

namespace ttlstm::ag {

namespace {

Var left_chain(Tape& tape, std::vector<Parameter>& cores) {
  if (cores.empty()) throw ShapeError("empty core chain");
  auto& first = cores.front().value;
  Var acc = tape.parameter(cores.front(), first.dim(0) * first.dim(1), first.dim(2));
  for (std::size_t k = 1; k < cores.size(); ++k) {
    const auto& c = cores[k].value;
    const auto p = static_cast<std::size_t>(acc.rows());
    Var core = tape.parameter(cores[k], c.dim(0), c.dim(1) * c.dim(2));
    acc = reshape(matmul(acc, core), p * c.dim(1), c.dim(2));
  }
  return acc;
}

}  // namespace

FactorVars mps_factors(Tape& tape, std::vector<Parameter>& row_cores,
                       std::vector<Parameter>& col_cores) {
  if (col_cores.empty()) throw ShapeError("MPS without column cores");
  FactorVars fv;
  fv.f = left_chain(tape, row_cores);

  auto& last = col_cores.back().value;
  Var d = tape.parameter(col_cores.back(), last.dim(0), last.dim(1) * last.dim(2));
  for (std::size_t k = col_cores.size() - 1; k-- > 0;) {
    const auto& c = col_cores[k].value;
    const auto p = static_cast<std::size_t>(d.cols());
    Var core = tape.parameter(col_cores[k], c.dim(0) * c.dim(1), c.dim(2));
    d = reshape(matmul(core, d), c.dim(0), c.dim(1) * p);
  }
  fv.gt = d;
  return fv;
}

Var mpo_weight(Tape& tape, std::vector<Parameter>& cores, const MpoLayout& layout) {
  Var flat = left_chain(tape, cores);
  return gather(flat, layout.row_offset, layout.col_offset);
}

Var mps_apply(const FactorVars& fv, Var x) {
  return matmul(matmul(x, fv.gt, false, true), fv.f, false, true);
}

}  // namespace ttlstm::ag
