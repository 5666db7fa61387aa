#pragma once

#include <vector>

#include "ttlstm/autograd.hpp"
#include "ttlstm/ttrain.hpp"

namespace ttlstm::ag {

/// F (N x r_c0) and G^T (r_c0 x M) recorded on a tape from MPS core
/// parameters, using the same contraction order as build_factor_pair.
struct FactorVars {
  Var f;
  Var gt;
};

FactorVars mps_factors(Tape& tape, std::vector<Parameter>& row_cores,
                       std::vector<Parameter>& col_cores);

/// Dense N x M weight from MPO core parameters (chain contraction + gather).
Var mpo_weight(Tape& tape, std::vector<Parameter>& cores, const MpoLayout& layout);

/// X (batch x M) -> X W^T = (X G) F^T, batch x N.
Var mps_apply(const FactorVars& fv, Var x);

}  // namespace ttlstm::ag
