#include "ttlstm/distill.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "ttlstm/error.hpp"

namespace ttlstm {

DataCovariance accumulate_covariance(const Matrix& samples) {
  if (samples.rows() == 0 || samples.cols() == 0)
    throw DomainError("covariance of an empty sample stream");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean;
  DataCovariance cov;
  cov.s.noalias() = centered.transpose() * centered;
  cov.s = 0.5 * (cov.s + cov.s.transpose()).eval();
  cov.count = static_cast<std::size_t>(samples.rows());
  return cov;
}

std::pair<double, double> eigen_extremes(const DataCovariance& cov) {
  if (cov.s.size() == 0) throw DomainError("empty covariance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.s, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return {ev.minCoeff(), ev.maxCoeff()};
}

Matrix covariance_factor(const DataCovariance& cov, double rel_floor) {
  if (cov.s.size() == 0) throw DomainError("empty covariance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.s);
  const auto& ev = es.eigenvalues();
  const double floor = rel_floor * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < ev.size(); ++k)
    if (ev(k) > floor) keep.push_back(k);
  Matrix c(cov.s.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k)
    c.col(static_cast<Eigen::Index>(k)) = es.eigenvectors().col(keep[k]) * std::sqrt(ev(keep[k]));
  return c;
}

const char* to_string(DistillMode m) {
  switch (m) {
    case DistillMode::None: return "none";
    case DistillMode::Kdw: return "kdw";
    case DistillMode::Kda: return "kda";
  }
  return "?";
}

DistillMode parse_distill_mode(const std::string& s) {
  if (s == "none") return DistillMode::None;
  if (s == "kdw") return DistillMode::Kdw;
  if (s == "kda") return DistillMode::Kda;
  throw ConfigError("unknown distillation mode '" + s + "' (none|kdw|kda)");
}

void DistillConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda))
    throw ConfigError("distillation lambda must be finite and >= 0");
}

namespace {

void same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("teacher is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     ", student is " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

double kd_penalty(const Matrix& teacher, const Matrix& student, const DataCovariance& cov,
                  double lambda) {
  same_shape(teacher, student);
  if (cov.dim() != static_cast<std::size_t>(teacher.cols()))
    throw ShapeError("covariance dimension differs from the weight's column count");
  const Matrix d = teacher - student;
  return lambda * (d * cov.s).cwiseProduct(d).sum();
}

double kd_penalty_identity(const Matrix& teacher, const Matrix& student, double lambda) {
  same_shape(teacher, student);
  return lambda * (teacher - student).squaredNorm();
}

double total_loss(double ce, double penalty) {
  if (!std::isfinite(ce) || !std::isfinite(penalty)) throw NumericError("non-finite loss term");
  return ce + penalty;
}

namespace ag {

Var kd_penalty(Var student, const Matrix& teacher, const Matrix* factor, double lambda) {
  Tape& tape = *student.tape;
  same_shape(teacher, student.value());
  if (!factor) return scale(sum_squares(sub(tape.constant(teacher), student)), lambda);
  if (factor->rows() != teacher.cols())
    throw ShapeError("covariance factor rows differ from the weight's column count");
  Var c = tape.constant(*factor);
  Var diff = sub(tape.constant(teacher * *factor), matmul(student, c));
  return scale(sum_squares(diff), lambda);
}

Var total_loss(Var ce, Var penalty) {
  if (!std::isfinite(ce.value()(0, 0)) || !std::isfinite(penalty.value()(0, 0)))
    throw NumericError("non-finite loss term");
  return add(ce, penalty);
}

}  // namespace ag
}  // namespace ttlstm
