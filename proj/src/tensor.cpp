#include "ttlstm/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "ttlstm/error.hpp"

namespace ttlstm {

namespace {

std::string dims_str(std::span<const std::size_t> dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t k = 0; k < dims.size(); ++k) os << (k ? "," : "") << dims[k];
  os << ')';
  return os.str();
}

void check_extents(const Extents& dims) {
  for (auto d : dims)
    if (d == 0) throw ShapeError("tensor extent must be >= 1, got " + dims_str(dims));
}

}  // namespace

std::size_t product(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t linear_index(const MultiIndex& mi, std::span<const std::size_t> dims) {
  if (mi.coords.size() != dims.size())
    throw IndexError("multi-index has " + std::to_string(mi.coords.size()) +
                     " coordinates for dims " + dims_str(dims));
  std::size_t flat = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const auto c = mi.coords[k];
    if (c < 1 || c > dims[k])
      throw IndexError("coordinate " + std::to_string(c) + " out of range on axis " +
                       std::to_string(k + 1) + " of " + dims_str(dims));
    flat = flat * dims[k] + (c - 1);
  }
  return flat + 1;
}

MultiIndex multi_index(std::size_t flat, std::span<const std::size_t> dims) {
  const auto total = product(dims);
  if (flat < 1 || flat > total)
    throw IndexError("flat index " + std::to_string(flat) + " outside [1, " +
                     std::to_string(total) + "]");
  MultiIndex mi;
  mi.coords.resize(dims.size());
  std::size_t rest = flat - 1;
  for (std::size_t k = dims.size(); k-- > 0;) {
    mi.coords[k] = rest % dims[k] + 1;
    rest /= dims[k];
  }
  return mi;
}

DenseTensor::DenseTensor(Extents dims, double fill) : dims_(std::move(dims)) {
  check_extents(dims_);
  data_.assign(product(dims_), fill);
}

DenseTensor::DenseTensor(Extents dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  check_extents(dims_);
  if (product(dims_) != data_.size())
    throw ShapeError("tensor dims " + dims_str(dims_) + " hold " + std::to_string(product(dims_)) +
                     " elements, got " + std::to_string(data_.size()));
}

double& DenseTensor::operator()(const MultiIndex& mi) { return data_[linear_index(mi, dims_) - 1]; }

double DenseTensor::operator()(const MultiIndex& mi) const {
  return data_[linear_index(mi, dims_) - 1];
}

std::size_t DenseTensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != dims_.size()) throw IndexError("wrong number of indices for " + dims_str(dims_));
  std::size_t flat = 0, k = 0;
  for (auto i : idx) {
    if (i >= dims_[k]) throw IndexError("index out of range for " + dims_str(dims_));
    flat = flat * dims_[k++] + i;
  }
  return flat;
}

double& DenseTensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
double DenseTensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

DenseTensor DenseTensor::reshaped(Extents dims) const {
  if (product(dims) != size())
    throw ShapeError("cannot reshape " + dims_str(dims_) + " to " + dims_str(dims));
  return DenseTensor(std::move(dims), data_);
}

MatrixMap DenseTensor::as_matrix(std::size_t rows, std::size_t cols) {
  if (rows * cols != size()) throw ShapeError("matrix view size mismatch for " + dims_str(dims_));
  return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatrixMap DenseTensor::as_matrix(std::size_t rows, std::size_t cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view size mismatch for " + dims_str(dims_));
  return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

DenseTensor mode31_product(const DenseTensor& g1, const DenseTensor& g2) {
  if (g1.rank() != 3 || g2.rank() != 3) throw ShapeError("mode-(3,1) product needs rank-3 operands");
  const auto k = g1.dim(2);
  if (k != g2.dim(0))
    throw ShapeError("mode-(3,1) contraction extents differ: " + dims_str(g1.dims()) + " x " +
                     dims_str(g2.dims()));
  DenseTensor out({g1.dim(0), g1.dim(1), g2.dim(1), g2.dim(2)});
  out.as_matrix(g1.dim(0) * g1.dim(1), g2.dim(1) * g2.dim(2)).noalias() =
      g1.as_matrix(g1.dim(0) * g1.dim(1), k) * g2.as_matrix(k, g2.dim(1) * g2.dim(2));
  return out;
}

DenseTensor fuse_middle(const DenseTensor& t) {
  if (t.rank() != 4) throw ShapeError("fuse_middle needs a rank-4 tensor, got " + dims_str(t.dims()));
  return t.reshaped({t.dim(0), t.dim(1) * t.dim(2), t.dim(3)});
}

}  // namespace ttlstm
