#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "ttlstm/autograd.hpp"
#include "ttlstm/tensor.hpp"

namespace ttlstm {

/// S = sum_i x_i x_i^T over mean-centered samples.
struct DataCovariance {
  Matrix s;
  std::size_t count = 0;
  std::size_t dim() const { return static_cast<std::size_t>(s.rows()); }
};

/// Two-pass: mean first, then the centered outer-product sum. One sample per
/// row of `samples`.
DataCovariance accumulate_covariance(const Matrix& samples);

/// (smallest, largest) eigenvalue of S.
std::pair<double, double> eigen_extremes(const DataCovariance& cov);

/// C with S = C C^T, keeping eigen-directions above a relative floor.
Matrix covariance_factor(const DataCovariance& cov, double rel_floor = 1e-12);

enum class DistillMode { None, Kdw, Kda };
const char* to_string(DistillMode m);
DistillMode parse_distill_mode(const std::string& s);

struct DistillConfig {
  DistillMode mode = DistillMode::None;
  double lambda = 0.0;
  void validate() const;
};

/// Teacher gate stacks W*_x (4H x E) and W*_h (4H x H).
struct TeacherWeights {
  Matrix wx;
  Matrix wh;
  std::string source;
};

/// lambda * Trace[(W* - W) S (W* - W)^T], direct evaluation.
double kd_penalty(const Matrix& teacher, const Matrix& student, const DataCovariance& cov,
                  double lambda);
/// lambda * ||W* - W||_F^2.
double kd_penalty_identity(const Matrix& teacher, const Matrix& student, double lambda);

namespace ag {
/// Differentiable penalty on the tape. `factor` is C with S = C C^T, or null
/// for S = identity. The trace is evaluated as ||(W* - W) C||_F^2.
Var kd_penalty(Var student, const Matrix& teacher, const Matrix* factor, double lambda);
/// ce + penalty; both must be finite.
Var total_loss(Var ce, Var penalty);
}  // namespace ag

double total_loss(double ce, double penalty);

}  // namespace ttlstm
