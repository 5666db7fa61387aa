#include "ttlstm/ttrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "ttlstm/error.hpp"

namespace ttlstm {

namespace {

std::string list_str(std::span<const std::size_t> v) {
  std::string s = "(";
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s + ")";
}

void fill_random(std::vector<DenseTensor>& cores, const InitScheme& init, double scale,
                 std::mt19937_64& rng) {
  if (init.kind == InitKind::FlatUniform) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (auto& core : cores)
      for (auto& v : core.data()) v = dist(rng);
  } else {
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& core : cores)
      for (auto& v : core.data()) v = dist(rng);
  }
}

}  // namespace

std::size_t ShapeFactorization::max_row_factor() const {
  return row_dims.empty() ? 1 : *std::max_element(row_dims.begin(), row_dims.end());
}

std::size_t ShapeFactorization::max_col_factor() const {
  return col_dims.empty() ? 1 : *std::max_element(col_dims.begin(), col_dims.end());
}

std::size_t ShapeFactorization::paired_col(std::size_t k) const {
  return col_permutation.empty() ? k : col_permutation.at(k);
}

Extents ShapeFactorization::fused_dims() const {
  if (row_dims.size() != col_dims.size())
    throw ShapeError("MPO needs as many row factors as column factors, got " +
                     list_str(row_dims) + " and " + list_str(col_dims));
  Extents out(row_dims.size());
  for (std::size_t k = 0; k < row_dims.size(); ++k) out[k] = row_dims[k] * col_dims[paired_col(k)];
  return out;
}

void ShapeFactorization::validate() const {
  if (row_dims.empty() || col_dims.empty()) throw ShapeError("factorization needs at least one factor");
  for (auto d : row_dims)
    if (d < 1) throw ShapeError("row factors must be >= 1");
  for (auto d : col_dims)
    if (d < 1) throw ShapeError("column factors must be >= 1");
  if (!col_permutation.empty()) {
    if (col_permutation.size() != col_dims.size() || row_dims.size() != col_dims.size())
      throw ShapeError("column permutation length must equal the factor count");
    std::vector<std::size_t> sorted = col_permutation;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k)
      if (sorted[k] != k) throw ShapeError("column permutation is not a permutation");
  }
}

std::vector<std::size_t> best_column_permutation(const ShapeFactorization& fact) {
  if (fact.row_dims.size() != fact.col_dims.size())
    throw ShapeError("column permutation requires n == m");
  const auto n = fact.row_dims.size();
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best_max = 0, best_sum = 0;
  do {
    std::size_t mx = 0, sum = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto h = fact.row_dims[k] * fact.col_dims[perm[k]];
      mx = std::max(mx, h);
      sum += h;
    }
    if (best.empty() || mx < best_max || (mx == best_max && sum < best_sum)) {
      best = perm;
      best_max = mx;
      best_sum = sum;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double init_params(const InitScheme& scheme, std::size_t fan_out, std::size_t total_cores,
                   std::span<const std::size_t> rank_chain) {
  if (!(scheme.alpha > 0.0 && scheme.alpha < 1.0))
    throw DomainError("init alpha must lie in (0,1), got " + std::to_string(scheme.alpha));
  if (fan_out == 0 || total_cores == 0) throw DomainError("init needs positive fan and core count");
  if (rank_chain.size() != total_cores)
    throw RankError("rank chain " + list_str(rank_chain) + " must have one entry per core");
  double log_prod = 0.0;
  for (auto r : rank_chain) {
    if (r == 0) throw RankError("ranks must be positive");
    log_prod += std::log(static_cast<double>(r));
  }
  const double n = static_cast<double>(total_cores);
  const double m = static_cast<double>(fan_out);

  if (scheme.kind == InitKind::GaussianVarianceMatched) {
    // Var(w) = sigma^{2n} prod r = M^{-1/2}
    const double log_var = -log_prod / n - std::log(m) / (2.0 * n);
    return std::exp(0.5 * log_var);
  }
  const double bound = scheme.bound > 0.0 ? scheme.bound : 1.0 / std::sqrt(m);
  const double z = normal_quantile(1.0 - scheme.alpha / 2.0);
  const double log_ratio = std::log(bound / z);
  if (scheme.kind == InitKind::FlatGaussian) {
    const double log_var = 2.0 * log_ratio / n - log_prod / n;
    return std::exp(0.5 * log_var);
  }
  return std::sqrt(3.0) * std::exp(log_ratio / n - log_prod / (2.0 * n));
}

std::vector<std::size_t> uniform_mps_row_ranks(std::size_t n, std::size_t rank) {
  std::vector<std::size_t> r(n + 1, rank);
  r.front() = 1;
  return r;
}

std::vector<std::size_t> uniform_mps_col_ranks(std::size_t m, std::size_t rank) {
  std::vector<std::size_t> r(m + 1, rank);
  r.back() = 1;
  return r;
}

std::vector<std::size_t> uniform_mpo_ranks(std::size_t n, std::size_t rank) {
  std::vector<std::size_t> r(n + 1, rank);
  r.front() = 1;
  r.back() = 1;
  return r;
}

std::vector<std::size_t> mps_rank_chain(std::span<const std::size_t> row_ranks,
                                        std::span<const std::size_t> col_ranks) {
  // (r_r0, ..., r_r(n-1), r_c0, ..., r_c(m-1)): the left bond of every core.
  std::vector<std::size_t> chain(row_ranks.begin(), row_ranks.end() - 1);
  chain.insert(chain.end(), col_ranks.begin(), col_ranks.end() - 1);
  return chain;
}

void check_mps_ranks(const ShapeFactorization& fact, std::span<const std::size_t> row_ranks,
                     std::span<const std::size_t> col_ranks) {
  if (row_ranks.size() != fact.row_dims.size() + 1 || col_ranks.size() != fact.col_dims.size() + 1)
    throw RankError("MPS needs n+1 row ranks and m+1 column ranks, got " + list_str(row_ranks) +
                    " and " + list_str(col_ranks));
  if (row_ranks.front() != 1) throw RankError("MPS boundary rank r_r0 must be 1");
  if (col_ranks.back() != 1) throw RankError("MPS boundary rank r_cm must be 1");
  if (row_ranks.back() != col_ranks.front())
    throw RankError("MPS middle ranks differ: r_rn = " + std::to_string(row_ranks.back()) +
                    ", r_c0 = " + std::to_string(col_ranks.front()));
  for (auto r : row_ranks)
    if (r == 0) throw RankError("ranks must be positive");
  for (auto r : col_ranks)
    if (r == 0) throw RankError("ranks must be positive");
}

void check_mpo_ranks(const ShapeFactorization& fact, std::span<const std::size_t> ranks) {
  if (fact.row_dims.size() != fact.col_dims.size())
    throw ShapeError("MPO needs n == m, got " + std::to_string(fact.row_dims.size()) + " and " +
                     std::to_string(fact.col_dims.size()));
  if (ranks.size() != fact.row_dims.size() + 1)
    throw RankError("MPO needs n+1 ranks, got " + list_str(ranks));
  if (ranks.front() != 1 || ranks.back() != 1) throw RankError("MPO boundary ranks must be 1");
  for (auto r : ranks)
    if (r == 0) throw RankError("ranks must be positive");
}

MpsTrain::MpsTrain(ShapeFactorization fact, std::vector<DenseTensor> row_cores,
                   std::vector<DenseTensor> col_cores)
    : fact_(std::move(fact)), row_cores_(std::move(row_cores)), col_cores_(std::move(col_cores)) {
  fact_.validate();
  if (row_cores_.size() != fact_.row_dims.size() || col_cores_.size() != fact_.col_dims.size())
    throw ShapeError("MPS core count does not match the factorization");
  row_ranks_.push_back(row_cores_.empty() ? 1 : row_cores_.front().dims().at(0));
  for (std::size_t k = 0; k < row_cores_.size(); ++k) {
    const auto& c = row_cores_[k];
    if (c.rank() != 3 || c.dim(0) != row_ranks_.back() || c.dim(1) != fact_.row_dims[k])
      throw ShapeError("MPS row core " + std::to_string(k + 1) + " has dims " + list_str(c.dims()));
    row_ranks_.push_back(c.dim(2));
  }
  col_ranks_.push_back(col_cores_.front().dim(0));
  for (std::size_t k = 0; k < col_cores_.size(); ++k) {
    const auto& c = col_cores_[k];
    if (c.rank() != 3 || c.dim(0) != col_ranks_.back() || c.dim(1) != fact_.col_dims[k])
      throw ShapeError("MPS column core " + std::to_string(k + 1) + " has dims " +
                       list_str(c.dims()));
    col_ranks_.push_back(c.dim(2));
  }
  check_mps_ranks(fact_, row_ranks_, col_ranks_);
}

std::size_t MpsTrain::max_rank() const {
  return std::max(*std::max_element(row_ranks_.begin(), row_ranks_.end()),
                  *std::max_element(col_ranks_.begin(), col_ranks_.end()));
}

MpoTrain::MpoTrain(ShapeFactorization fact, std::vector<DenseTensor> cores)
    : fact_(std::move(fact)), cores_(std::move(cores)) {
  fact_.validate();
  const auto fused = fact_.fused_dims();
  if (cores_.size() != fused.size()) throw ShapeError("MPO core count does not match the factorization");
  ranks_.push_back(cores_.front().dims().at(0));
  for (std::size_t k = 0; k < cores_.size(); ++k) {
    const auto& c = cores_[k];
    if (c.rank() != 3 || c.dim(0) != ranks_.back() || c.dim(1) != fused[k])
      throw ShapeError("MPO core " + std::to_string(k + 1) + " has dims " + list_str(c.dims()));
    ranks_.push_back(c.dim(2));
  }
  check_mpo_ranks(fact_, ranks_);
}

std::size_t MpoTrain::max_rank() const { return *std::max_element(ranks_.begin(), ranks_.end()); }

MpsTrain new_mps(const ShapeFactorization& fact, std::span<const std::size_t> row_ranks,
                 std::span<const std::size_t> col_ranks, const InitScheme& init,
                 std::uint64_t seed) {
  fact.validate();
  check_mps_ranks(fact, row_ranks, col_ranks);
  std::vector<DenseTensor> rows, cols;
  for (std::size_t k = 0; k < fact.row_dims.size(); ++k)
    rows.emplace_back(Extents{row_ranks[k], fact.row_dims[k], row_ranks[k + 1]});
  for (std::size_t k = 0; k < fact.col_dims.size(); ++k)
    cols.emplace_back(Extents{col_ranks[k], fact.col_dims[k], col_ranks[k + 1]});

  const auto chain = mps_rank_chain(row_ranks, col_ranks);
  const double scale = init_params(init, fact.cols(), chain.size(), chain);
  std::mt19937_64 rng(seed);
  fill_random(rows, init, scale, rng);
  fill_random(cols, init, scale, rng);
  return MpsTrain(fact, std::move(rows), std::move(cols));
}

MpoTrain new_mpo(const ShapeFactorization& fact, std::span<const std::size_t> ranks,
                 const InitScheme& init, std::uint64_t seed) {
  fact.validate();
  check_mpo_ranks(fact, ranks);
  const auto fused = fact.fused_dims();
  std::vector<DenseTensor> cores;
  for (std::size_t k = 0; k < fused.size(); ++k)
    cores.emplace_back(Extents{ranks[k], fused[k], ranks[k + 1]});
  const std::vector<std::size_t> chain(ranks.begin(), ranks.end() - 1);
  const double scale = init_params(init, fact.cols(), chain.size(), chain);
  std::mt19937_64 rng(seed);
  fill_random(cores, init, scale, rng);
  return MpoTrain(fact, std::move(cores));
}

std::size_t mps_storage(const ShapeFactorization& fact, std::span<const std::size_t> row_ranks,
                        std::span<const std::size_t> col_ranks) {
  check_mps_ranks(fact, row_ranks, col_ranks);
  std::size_t total = 0;
  for (std::size_t i = 0; i < fact.row_dims.size(); ++i)
    total += row_ranks[i] * row_ranks[i + 1] * fact.row_dims[i];
  for (std::size_t j = 0; j < fact.col_dims.size(); ++j)
    total += col_ranks[j] * col_ranks[j + 1] * fact.col_dims[j];
  return total;
}

std::size_t mpo_storage(const ShapeFactorization& fact, std::span<const std::size_t> ranks) {
  check_mpo_ranks(fact, ranks);
  const auto fused = fact.fused_dims();
  std::size_t total = 0;
  for (std::size_t i = 0; i < fused.size(); ++i) total += ranks[i] * ranks[i + 1] * fused[i];
  return total;
}

std::size_t storage_count(const MpsTrain& train) {
  return mps_storage(train.factorization(), train.row_ranks(), train.col_ranks());
}

std::size_t storage_count(const MpoTrain& train) {
  return mpo_storage(train.factorization(), train.ranks());
}

MpoLayout mpo_layout(const ShapeFactorization& fact) {
  const auto fused = fact.fused_dims();
  const auto n = fused.size();
  std::vector<std::size_t> stride(n, 1);
  for (std::size_t k = n - 1; k-- > 0;) stride[k] = stride[k + 1] * fused[k + 1];

  MpoLayout layout;
  const auto rows = fact.rows(), cols = fact.cols();
  layout.row_offset.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t rest = i, off = 0;
    for (std::size_t k = n; k-- > 0;) {
      off += (rest % fact.row_dims[k]) * stride[k];
      rest /= fact.row_dims[k];
    }
    layout.row_offset[i] = off;
  }
  // column digit q sits in the core k with pi(k) == q
  std::vector<std::size_t> col_stride(n);
  for (std::size_t k = 0; k < n; ++k) col_stride[fact.paired_col(k)] = fact.row_dims[k] * stride[k];
  layout.col_offset.resize(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    std::size_t rest = j, off = 0;
    for (std::size_t q = n; q-- > 0;) {
      off += (rest % fact.col_dims[q]) * col_stride[q];
      rest /= fact.col_dims[q];
    }
    layout.col_offset[j] = off;
  }
  return layout;
}

namespace {

void check_cap(std::size_t rows, std::size_t cols, std::size_t cap) {
  if (rows * cols > cap)
    throw CapacityError("materializing a " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " matrix exceeds the cap of " + std::to_string(cap) + " entries");
}

DenseTensor chain_contract(const std::vector<const DenseTensor*>& cores) {
  DenseTensor acc = *cores.front();
  for (std::size_t k = 1; k < cores.size(); ++k) acc = fuse_middle(mode31_product(acc, *cores[k]));
  return acc;
}

}  // namespace

Matrix reconstruct(const MpsTrain& train, std::size_t cap) {
  const auto& fact = train.factorization();
  check_cap(fact.rows(), fact.cols(), cap);
  std::vector<const DenseTensor*> cores;
  for (const auto& c : train.row_cores()) cores.push_back(&c);
  for (const auto& c : train.col_cores()) cores.push_back(&c);
  // (1, I_1..I_n J_1..J_m, 1) in row-major order is W with colex row/col indices.
  const auto full = chain_contract(cores);
  return full.as_matrix(fact.rows(), fact.cols());
}

Matrix reconstruct(const MpoTrain& train, std::size_t cap) {
  const auto& fact = train.factorization();
  check_cap(fact.rows(), fact.cols(), cap);
  std::vector<const DenseTensor*> cores;
  for (const auto& c : train.cores()) cores.push_back(&c);
  const auto full = chain_contract(cores);
  const auto layout = mpo_layout(fact);
  const auto values = full.data();
  Matrix w(fact.rows(), fact.cols());
  for (std::size_t i = 0; i < fact.rows(); ++i)
    for (std::size_t j = 0; j < fact.cols(); ++j)
      w(i, j) = values[layout.row_offset[i] + layout.col_offset[j]];
  return w;
}

}  // namespace ttlstm
