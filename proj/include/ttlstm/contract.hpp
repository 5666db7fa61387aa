#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ttlstm/tensor.hpp"
#include "ttlstm/ttrain.hpp"

namespace ttlstm {

/// Per-call multiply-add instrumentation. Pass a pointer to any kernel that
/// accepts one; nothing is shared between calls.
struct OpCounter {
  std::uint64_t multiply_adds = 0;
};

/// Precomputed row/column chain contractions of an MPS: W = F * G^T.
struct FactorPair {
  Matrix f;  ///< N x r_c0, contraction of the row cores
  Matrix g;  ///< M x r_c0, contraction of the column cores
  std::size_t rows() const { return static_cast<std::size_t>(f.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(g.rows()); }
  std::size_t middle_rank() const { return static_cast<std::size_t>(f.cols()); }
};

/// F from the row cores, contracted from the open left boundary towards the
/// shared bond; G^T from the column cores by right-to-left pairwise
/// contraction starting at B^(m).
FactorPair build_factor_pair(const MpsTrain& mps, OpCounter* counter = nullptr);

/// y = F (G^T x), never materializing W.
Vector mps_matvec(const FactorPair& fp, const Vector& x, OpCounter* counter = nullptr);

/// Batched form on row vectors: Y = (X G) F^T, X is batch x M.
Matrix mps_apply(const FactorPair& fp, const Matrix& x, OpCounter* counter = nullptr);

/// Reconstruct-then-multiply. `cache`, when given, must be reconstruct(mpo)
/// and skips the reconstruction.
Vector mpo_matvec(const MpoTrain& mpo, const Vector& x, const Matrix* cache = nullptr,
                  OpCounter* counter = nullptr);

/// MPO reconstruction with instrumented chain contraction.
Matrix mpo_reconstruct_counted(const MpoTrain& mpo, OpCounter* counter = nullptr,
                               std::size_t cap = kDefaultMaterializationCap);

enum class TrainKind { Mps, Mpo };

/// Rank chains for either representation: MPS uses row/col chains, MPO the
/// single `ranks` chain.
struct RankChains {
  std::vector<std::size_t> row_ranks;
  std::vector<std::size_t> col_ranks;
  std::vector<std::size_t> ranks;

  static RankChains uniform(const ShapeFactorization& fact, std::size_t rank, TrainKind kind);
  std::size_t max_rank() const;
};

struct CostReport {
  std::uint64_t storage = 0;
  /// Theorem-level storage bound: R(I+J)+R^2[(n-1)I+(m-1)J] or IJ[2R+(n-2)R^2].
  double storage_bound = 0;
  /// Op-count bound: R(N+M)+R^2[(n-1)N+(m-1)M] or NM[R+R^2(n-2)].
  double matvec_ops = 0;
  /// Individual terms of matvec_ops in order of appearance.
  double bound_linear_term = 0;
  double bound_quadratic_term = 0;
  std::size_t max_rank = 0;
  std::size_t max_row_factor = 0;
  std::size_t max_col_factor = 0;
};

CostReport cost_model(const ShapeFactorization& fact, const RankChains& ranks, TrainKind kind);

/// Uniform inner rank achieving compression rate `target_rate` = NM/storage.
/// Evaluates the closed-form rank from the storage bound; when that estimate
/// misses the target by more than 25% under exact storage (unbalanced or
/// many-factor shapes) the exact uniform-rank storage equation is solved
/// instead. Result is floored and clamped to >= 1.
std::size_t pick_rank(double target_rate, const ShapeFactorization& fact, TrainKind kind);

/// The unrounded closed-form rank R_s / R_o from the storage bound.
double closed_form_rank(double target_rate, const ShapeFactorization& fact, TrainKind kind);

/// O_MPO / O_MPS = NM(I+J) / [IJ(N+M)], halved for n == 2.
double efficiency_gain(const ShapeFactorization& fact);

double compression_rate(double full_param_count, double tt_param_count);

}  // namespace ttlstm
