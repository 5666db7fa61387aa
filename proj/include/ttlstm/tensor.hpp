#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace ttlstm {

/// Row-major dense matrix; the storage convention for every 2-D quantity.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

using Extents = std::vector<std::size_t>;

std::size_t product(std::span<const std::size_t> dims);

/// Positions along each axis, 1-based.
struct MultiIndex {
  std::vector<std::size_t> coords;

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
};

/// Big-endian colexicographic flat index (last coordinate fastest), 1-based
/// on both sides: i = i_n + (i_{n-1}-1) I_n + ... + (i_1-1) I_2...I_n.
std::size_t linear_index(const MultiIndex& mi, std::span<const std::size_t> dims);

/// Inverse of linear_index.
MultiIndex multi_index(std::size_t flat, std::span<const std::size_t> dims);

/// Dense real tensor, row-major with the last index varying fastest.
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(Extents dims, double fill = 0.0);
  DenseTensor(Extents dims, std::vector<double> data);

  const Extents& dims() const { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// 1-based element access.
  double& operator()(const MultiIndex& mi);
  double operator()(const MultiIndex& mi) const;

  /// 0-based element access.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  /// Same data under new extents with equal element count.
  DenseTensor reshaped(Extents dims) const;

  /// View as a rows x cols row-major matrix.
  MatrixMap as_matrix(std::size_t rows, std::size_t cols);
  ConstMatrixMap as_matrix(std::size_t rows, std::size_t cols) const;

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Extents dims_;
  std::vector<double> data_;
};

/// Contract the third axis of a with the first axis of b:
/// out[a,b,c,d] = sum_k g1[a,b,k] * g2[k,c,d].
DenseTensor mode31_product(const DenseTensor& g1, const DenseTensor& g2);

/// Fuse the two middle axes of a rank-4 tensor, giving a rank-3 core.
DenseTensor fuse_middle(const DenseTensor& t);

}  // namespace ttlstm
