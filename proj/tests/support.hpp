#pragma once

// Independent oracles shared by the unit and acceptance tests. Nothing here
// calls the contraction code under test.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ttlstm/ttrain.hpp"

namespace testsupport {

using ttlstm::DenseTensor;
using ttlstm::Extents;
using ttlstm::Matrix;

inline Matrix random_matrix(long rows, long cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline DenseTensor random_tensor(Extents dims, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  DenseTensor t(std::move(dims), 0.0);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

/// Digits of a 0-based flat index, last coordinate fastest.
inline std::vector<std::size_t> digits(std::size_t flat, const Extents& dims) {
  std::vector<std::size_t> d(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    d[k] = flat % dims[k];
    flat /= dims[k];
  }
  return d;
}

/// Row vector times core slice: v (1 x r_in) * core(:, idx, :).
inline std::vector<double> apply_slice(const std::vector<double>& v, const DenseTensor& core,
                                       std::size_t idx) {
  const std::size_t rin = core.dim(0), d = core.dim(1), rout = core.dim(2);
  std::vector<double> out(rout, 0.0);
  const auto data = core.data();
  for (std::size_t a = 0; a < rin; ++a)
    for (std::size_t b = 0; b < rout; ++b) out[b] += v[a] * data[(a * d + idx) * rout + b];
  return out;
}

/// Element-by-element MPS reconstruction straight from the definition.
inline Matrix naive_mps(const ttlstm::ShapeFactorization& f, const std::vector<DenseTensor>& rows,
                        const std::vector<DenseTensor>& cols) {
  Matrix w(f.rows(), f.cols());
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t j = 0; j < f.cols(); ++j) {
      const auto di = digits(i, f.row_dims), dj = digits(j, f.col_dims);
      std::vector<double> v{1.0};
      for (std::size_t k = 0; k < rows.size(); ++k) v = apply_slice(v, rows[k], di[k]);
      for (std::size_t k = 0; k < cols.size(); ++k) v = apply_slice(v, cols[k], dj[k]);
      w(i, j) = v.at(0);
    }
  return w;
}

/// Element-by-element MPO reconstruction with h_k = i_k + j_pi(k) * I_k (0-based).
inline Matrix naive_mpo(const ttlstm::ShapeFactorization& f, const std::vector<DenseTensor>& cores) {
  Matrix w(f.rows(), f.cols());
  const std::size_t n = f.row_dims.size();
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t j = 0; j < f.cols(); ++j) {
      const auto di = digits(i, f.row_dims), dj = digits(j, f.col_dims);
      std::vector<double> v{1.0};
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t pk = f.col_permutation.empty() ? k : f.col_permutation[k];
        v = apply_slice(v, cores[k], di[k] + dj[pk] * f.row_dims[k]);
      }
      w(i, j) = v.at(0);
    }
  return w;
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

/// Random factorization of size <= cap per side with 1..max_factors factors.
inline Extents random_dims(std::mt19937_64& rng, std::size_t count, std::size_t max_extent,
                           std::size_t cap) {
  for (;;) {
    Extents d(count);
    std::uniform_int_distribution<std::size_t> e(1, max_extent);
    std::size_t prod = 1;
    for (auto& x : d) {
      x = e(rng);
      prod *= x;
    }
    if (prod <= cap && prod >= 2) return d;
  }
}

}  // namespace testsupport
