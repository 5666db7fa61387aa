#include "ttlstm/contract.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ttlstm/error.hpp"

namespace ttlstm {

namespace {

using Index = Eigen::Index;

void count(OpCounter* counter, std::uint64_t ops) {
  if (counter) counter->multiply_adds += ops;
}

/// Left-to-right chain over cores of dims (r_{k-1}, d_k, r_k), r_0 = 1:
/// returns the (d_1...d_L) x r_L matrix, rows in colex order.
Matrix left_chain(const std::vector<const DenseTensor*>& cores, OpCounter* counter) {
  const auto& first = *cores.front();
  Matrix acc = first.as_matrix(first.dim(0) * first.dim(1), first.dim(2));
  for (std::size_t k = 1; k < cores.size(); ++k) {
    const auto& core = *cores[k];
    const auto p = static_cast<std::size_t>(acc.rows());
    const auto r_in = core.dim(0), d = core.dim(1), r_out = core.dim(2);
    Matrix step = acc * core.as_matrix(r_in, d * r_out);
    count(counter, static_cast<std::uint64_t>(p) * r_in * d * r_out);
    acc = ConstMatrixMap(step.data(), static_cast<Index>(p * d), static_cast<Index>(r_out));
  }
  return acc;
}

}  // namespace

FactorPair build_factor_pair(const MpsTrain& mps, OpCounter* counter) {
  FactorPair fp;
  std::vector<const DenseTensor*> rows;
  for (const auto& c : mps.row_cores()) rows.push_back(&c);
  fp.f = left_chain(rows, counter);

  // D recursion: D <- B^(k) x D, carrying the fused (j_k..j_m) index.
  const auto& cols = mps.col_cores();
  const auto& last = cols.back();
  Matrix d = last.as_matrix(last.dim(0), last.dim(1) * last.dim(2));
  for (std::size_t k = cols.size() - 1; k-- > 0;) {
    const auto& core = cols[k];
    const auto r_in = core.dim(0), j = core.dim(1), r_out = core.dim(2);
    const auto p = static_cast<std::size_t>(d.cols());
    Matrix step = core.as_matrix(r_in * j, r_out) * d;
    count(counter, static_cast<std::uint64_t>(r_in) * j * r_out * p);
    d = ConstMatrixMap(step.data(), static_cast<Index>(r_in), static_cast<Index>(j * p));
  }
  fp.g = d.transpose();
  return fp;
}

Vector mps_matvec(const FactorPair& fp, const Vector& x, OpCounter* counter) {
  if (static_cast<std::size_t>(x.size()) != fp.cols())
    throw ShapeError("mps_matvec: x has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(fp.cols()));
  const Vector z = fp.g.transpose() * x;
  Vector y = fp.f * z;
  count(counter, static_cast<std::uint64_t>(fp.middle_rank()) * (fp.rows() + fp.cols()));
  return y;
}

Matrix mps_apply(const FactorPair& fp, const Matrix& x, OpCounter* counter) {
  if (static_cast<std::size_t>(x.cols()) != fp.cols())
    throw ShapeError("mps_apply: input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(fp.cols()));
  const Matrix z = x * fp.g;
  Matrix y = z * fp.f.transpose();
  count(counter, static_cast<std::uint64_t>(x.rows()) * fp.middle_rank() * (fp.rows() + fp.cols()));
  return y;
}

Matrix mpo_reconstruct_counted(const MpoTrain& mpo, OpCounter* counter, std::size_t cap) {
  const auto& fact = mpo.factorization();
  if (fact.rows() * fact.cols() > cap)
    throw CapacityError("MPO reconstruction of " + std::to_string(fact.rows()) + "x" +
                        std::to_string(fact.cols()) + " exceeds the materialization cap");
  std::vector<const DenseTensor*> cores;
  for (const auto& c : mpo.cores()) cores.push_back(&c);
  const Matrix flat = left_chain(cores, counter);
  const auto layout = mpo_layout(fact);
  Matrix w(fact.rows(), fact.cols());
  const double* src = flat.data();
  for (std::size_t i = 0; i < fact.rows(); ++i) {
    const double* row = src + layout.row_offset[i];
    for (std::size_t j = 0; j < fact.cols(); ++j) w(i, j) = row[layout.col_offset[j]];
  }
  return w;
}

Vector mpo_matvec(const MpoTrain& mpo, const Vector& x, const Matrix* cache, OpCounter* counter) {
  const auto& fact = mpo.factorization();
  if (static_cast<std::size_t>(x.size()) != fact.cols())
    throw ShapeError("mpo_matvec: x has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(fact.cols()));
  Matrix local;
  if (!cache) {
    local = mpo_reconstruct_counted(mpo, counter);
    cache = &local;
  } else if (static_cast<std::size_t>(cache->rows()) != fact.rows() ||
             static_cast<std::size_t>(cache->cols()) != fact.cols()) {
    throw ShapeError("mpo_matvec: cached matrix has the wrong shape");
  }
  count(counter, static_cast<std::uint64_t>(fact.rows()) * fact.cols());
  return *cache * x;
}

RankChains RankChains::uniform(const ShapeFactorization& fact, std::size_t rank, TrainKind kind) {
  RankChains rc;
  if (kind == TrainKind::Mps) {
    rc.row_ranks = uniform_mps_row_ranks(fact.row_dims.size(), rank);
    rc.col_ranks = uniform_mps_col_ranks(fact.col_dims.size(), rank);
  } else {
    rc.ranks = uniform_mpo_ranks(fact.row_dims.size(), rank);
  }
  return rc;
}

std::size_t RankChains::max_rank() const {
  std::size_t r = 1;
  for (const auto* chain : {&row_ranks, &col_ranks, &ranks})
    for (auto v : *chain) r = std::max(r, v);
  return r;
}

CostReport cost_model(const ShapeFactorization& fact, const RankChains& ranks, TrainKind kind) {
  fact.validate();
  CostReport rep;
  rep.max_rank = ranks.max_rank();
  rep.max_row_factor = fact.max_row_factor();
  rep.max_col_factor = fact.max_col_factor();
  const double r = static_cast<double>(rep.max_rank);
  const double i_max = static_cast<double>(rep.max_row_factor);
  const double j_max = static_cast<double>(rep.max_col_factor);
  const double n = static_cast<double>(fact.row_dims.size());
  const double m = static_cast<double>(fact.col_dims.size());
  const double rows = static_cast<double>(fact.rows());
  const double cols = static_cast<double>(fact.cols());

  if (kind == TrainKind::Mps) {
    rep.storage = mps_storage(fact, ranks.row_ranks, ranks.col_ranks);
    rep.storage_bound = r * (i_max + j_max) + r * r * ((n - 1) * i_max + (m - 1) * j_max);
    rep.bound_linear_term = r * (rows + cols);
    rep.bound_quadratic_term = r * r * ((n - 1) * rows + (m - 1) * cols);
  } else {
    rep.storage = mpo_storage(fact, ranks.ranks);
    const double extra = std::max(0.0, n - 2);
    rep.storage_bound = i_max * j_max * (2 * r + extra * r * r);
    rep.bound_linear_term = rows * cols * r;
    rep.bound_quadratic_term = rows * cols * r * r * extra;
  }
  rep.matvec_ops = rep.bound_linear_term + rep.bound_quadratic_term;
  return rep;
}

namespace {

void check_rate(double target_rate) {
  if (!(target_rate > 1.0))
    throw DomainError("target compression rate must exceed 1, got " + std::to_string(target_rate));
}

/// Extents of the cores along the chain, in order.
std::vector<double> chain_extents(const ShapeFactorization& fact, TrainKind kind) {
  std::vector<double> d;
  if (kind == TrainKind::Mps) {
    for (auto v : fact.row_dims) d.push_back(static_cast<double>(v));
    for (auto v : fact.col_dims) d.push_back(static_cast<double>(v));
  } else {
    for (auto v : fact.fused_dims()) d.push_back(static_cast<double>(v));
  }
  return d;
}

/// Solve exact uniform-rank storage a R^2 + b R + c = budget for R.
double exact_uniform_rank(const ShapeFactorization& fact, TrainKind kind, double budget) {
  const auto d = chain_extents(fact, kind);
  if (d.size() == 1) return 1.0;
  const double b = d.front() + d.back();
  double a = 0;
  for (std::size_t k = 1; k + 1 < d.size(); ++k) a += d[k];
  if (a == 0) return budget / b;
  return (-b + std::sqrt(b * b + 4 * a * budget)) / (2 * a);
}

}  // namespace

double closed_form_rank(double target_rate, const ShapeFactorization& fact, TrainKind kind) {
  check_rate(target_rate);
  fact.validate();
  if (fact.row_dims.size() != fact.col_dims.size())
    throw ShapeError("rank planning assumes n == m");
  const double kappa = 1.0 / target_rate;
  const double n = static_cast<double>(fact.row_dims.size());
  const double nm = static_cast<double>(fact.rows()) * static_cast<double>(fact.cols());
  const double i_max = static_cast<double>(fact.max_row_factor());
  const double j_max = static_cast<double>(fact.max_col_factor());

  if (kind == TrainKind::Mps) {
    if (n == 1) return kappa * nm / (i_max + j_max);
    return (std::sqrt(1 + 4 * kappa * (n - 1) * nm / (i_max + j_max)) - 1) / (2 * (n - 1));
  }
  if (n == 1) return 1.0;
  if (n == 2) return kappa * nm / (2 * i_max * j_max);
  return (std::sqrt(1 + kappa * (n - 2) * nm / (i_max * j_max)) - 1) / (n - 2);
}

std::size_t pick_rank(double target_rate, const ShapeFactorization& fact, TrainKind kind) {
  auto floor_clamped = [](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(r)));
  };
  const std::size_t guess = floor_clamped(closed_form_rank(target_rate, fact, kind));
  const double full = static_cast<double>(fact.rows()) * static_cast<double>(fact.cols());
  const auto achieved = [&](std::size_t r) {
    const auto rep = cost_model(fact, RankChains::uniform(fact, r, kind), kind);
    return full / static_cast<double>(rep.storage);
  };
  if (std::abs(achieved(guess) - target_rate) <= 0.25 * target_rate) return guess;
  return floor_clamped(exact_uniform_rank(fact, kind, full / target_rate));
}

double efficiency_gain(const ShapeFactorization& fact) {
  fact.validate();
  const auto n = fact.row_dims.size();
  if (n != fact.col_dims.size() || n < 2)
    throw ShapeError("efficiency gain needs n == m >= 2");
  const double rows = static_cast<double>(fact.rows());
  const double cols = static_cast<double>(fact.cols());
  const double i_max = static_cast<double>(fact.max_row_factor());
  const double j_max = static_cast<double>(fact.max_col_factor());
  double ratio = rows * cols * (i_max + j_max) / (i_max * j_max * (rows + cols));
  if (n == 2) ratio /= 2;
  return ratio;
}

double compression_rate(double full_param_count, double tt_param_count) {
  if (!(tt_param_count > 0)) throw DomainError("compression rate: tensorized parameter count must be positive");
  if (!(full_param_count > 0)) throw DomainError("compression rate: full parameter count must be positive");
  return full_param_count / tt_param_count;
}

}  // namespace ttlstm
