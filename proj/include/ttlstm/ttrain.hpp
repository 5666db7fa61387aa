#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ttlstm/tensor.hpp"

namespace ttlstm {

/// Factorization of an N x M matrix into (I_1..I_n) x (J_1..J_m).
///
/// `col_permutation` (0-based, may be empty for identity) pairs row factor k
/// with column factor pi(k) when the two are fused into a single MPO core.
struct ShapeFactorization {
  Extents row_dims;
  Extents col_dims;
  std::vector<std::size_t> col_permutation;

  std::size_t rows() const { return product(row_dims); }
  std::size_t cols() const { return product(col_dims); }
  std::size_t max_row_factor() const;
  std::size_t max_col_factor() const;

  /// pi(k), identity when no permutation is set.
  std::size_t paired_col(std::size_t k) const;

  /// Fused MPO extents I_k * J_pi(k). Requires n == m.
  Extents fused_dims() const;

  void validate() const;
};

/// Column permutation minimizing max_k I_k * J_pi(k) (ties: smallest sum,
/// then lexicographically smallest permutation).
std::vector<std::size_t> best_column_permutation(const ShapeFactorization& fact);

enum class InitKind { GaussianVarianceMatched, FlatGaussian, FlatUniform };

struct InitScheme {
  InitKind kind = InitKind::GaussianVarianceMatched;
  /// Target bound B for the flat schemes; <= 0 selects 1/sqrt(M).
  double bound = 0.0;
  /// Tail mass alpha for the flat schemes.
  double alpha = 0.05;
};

/// Standard normal quantile function Phi^{-1}(p), 0 < p < 1.
double normal_quantile(double p);

/// Per-entry standard deviation (gaussian kinds) or half-width b (uniform)
/// for the cores of a train with `total_cores` cores whose rank chain is
/// `rank_chain` = (r_0 = 1, r_1, ..., r_{total_cores-1}).
double init_params(const InitScheme& scheme, std::size_t fan_out, std::size_t total_cores,
                   std::span<const std::size_t> rank_chain);

/// MPS train: row cores A^(k) of dims (r_r(k-1), I_k, r_rk) followed by
/// column cores B^(k) of dims (r_c(k-1), J_k, r_ck).
class MpsTrain {
 public:
  MpsTrain(ShapeFactorization fact, std::vector<DenseTensor> row_cores,
           std::vector<DenseTensor> col_cores);

  const ShapeFactorization& factorization() const { return fact_; }
  const std::vector<DenseTensor>& row_cores() const { return row_cores_; }
  const std::vector<DenseTensor>& col_cores() const { return col_cores_; }
  /// r_r0 .. r_rn
  const std::vector<std::size_t>& row_ranks() const { return row_ranks_; }
  /// r_c0 .. r_cm
  const std::vector<std::size_t>& col_ranks() const { return col_ranks_; }
  std::size_t middle_rank() const { return col_ranks_.front(); }
  std::size_t max_rank() const;

 private:
  ShapeFactorization fact_;
  std::vector<DenseTensor> row_cores_;
  std::vector<DenseTensor> col_cores_;
  std::vector<std::size_t> row_ranks_;
  std::vector<std::size_t> col_ranks_;
};

/// MPO train: cores of dims (r_{k-1}, I_k * J_pi(k), r_k). The fused middle
/// index is h_k = i_k + (j_pi(k) - 1) I_k, so i_k varies fastest.
class MpoTrain {
 public:
  MpoTrain(ShapeFactorization fact, std::vector<DenseTensor> cores);

  const ShapeFactorization& factorization() const { return fact_; }
  const std::vector<DenseTensor>& cores() const { return cores_; }
  const std::vector<std::size_t>& ranks() const { return ranks_; }
  std::size_t max_rank() const;

 private:
  ShapeFactorization fact_;
  std::vector<DenseTensor> cores_;
  std::vector<std::size_t> ranks_;
};

std::vector<std::size_t> uniform_mps_row_ranks(std::size_t n, std::size_t rank);
std::vector<std::size_t> uniform_mps_col_ranks(std::size_t m, std::size_t rank);
std::vector<std::size_t> uniform_mpo_ranks(std::size_t n, std::size_t rank);

/// Rank chain (1, r_1, ..., r_{total-1}) of the combined MPS core sequence.
std::vector<std::size_t> mps_rank_chain(std::span<const std::size_t> row_ranks,
                                        std::span<const std::size_t> col_ranks);

void check_mps_ranks(const ShapeFactorization& fact, std::span<const std::size_t> row_ranks,
                     std::span<const std::size_t> col_ranks);
void check_mpo_ranks(const ShapeFactorization& fact, std::span<const std::size_t> ranks);

MpsTrain new_mps(const ShapeFactorization& fact, std::span<const std::size_t> row_ranks,
                 std::span<const std::size_t> col_ranks, const InitScheme& init,
                 std::uint64_t seed);

MpoTrain new_mpo(const ShapeFactorization& fact, std::span<const std::size_t> ranks,
                 const InitScheme& init, std::uint64_t seed);

/// Exact parameter counts from factorization and ranks alone.
std::size_t mps_storage(const ShapeFactorization& fact, std::span<const std::size_t> row_ranks,
                        std::span<const std::size_t> col_ranks);
std::size_t mpo_storage(const ShapeFactorization& fact, std::span<const std::size_t> ranks);

std::size_t storage_count(const MpsTrain& train);
std::size_t storage_count(const MpoTrain& train);

inline constexpr std::size_t kDefaultMaterializationCap = std::size_t{1} << 26;

/// Row offsets into the flattened (h_1..h_n) MPO tensor: entry (i, j) of the
/// matrix lives at row_offset[i] + col_offset[j].
struct MpoLayout {
  std::vector<std::size_t> row_offset;
  std::vector<std::size_t> col_offset;
};
MpoLayout mpo_layout(const ShapeFactorization& fact);

Matrix reconstruct(const MpsTrain& train, std::size_t cap = kDefaultMaterializationCap);
Matrix reconstruct(const MpoTrain& train, std::size_t cap = kDefaultMaterializationCap);

}  // namespace ttlstm
