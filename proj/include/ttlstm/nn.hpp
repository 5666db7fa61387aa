#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ttlstm/autograd.hpp"
#include "ttlstm/contract.hpp"
#include "ttlstm/tt_ops.hpp"
#include "ttlstm/ttrain.hpp"

namespace ttlstm {

enum class Representation { Dense, Mps, Mpo };

const char* to_string(Representation r);
Representation parse_representation(const std::string& s);

/// How to build one linear map: representation, factorization, ranks, init.
struct LinearSpec {
  Representation kind = Representation::Dense;
  ShapeFactorization fact;  ///< ignored for dense except rows()/cols()
  RankChains ranks;
  InitScheme init;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// y = W x (+ bias) with W stored dense, as an MPS, or as an MPO.
class TTLinear {
 public:
  TTLinear() = default;

  static TTLinear create(const std::string& name, const LinearSpec& spec, bool with_bias,
                         std::uint64_t seed);
  static TTLinear from_dense(const std::string& name, const Matrix& w, bool with_bias);
  static TTLinear from_mps(const std::string& name, const MpsTrain& train, bool with_bias);
  static TTLinear from_mpo(const std::string& name, const MpoTrain& train, bool with_bias);

  Representation kind() const { return kind_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const ShapeFactorization& factorization() const { return fact_; }
  const RankChains& ranks() const { return ranks_; }
  bool has_bias() const { return has_bias_; }

  /// Weight parameters: one dense matrix, MPS row cores then column cores,
  /// or MPO cores. The bias (if any) is last.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t weight_count() const;

  MpsTrain mps() const;
  MpoTrain mpo() const;
  /// Dense N x M weight (reconstructed for train representations).
  Matrix weight() const;

  /// Per-step tape binding; the train contraction is recorded once and
  /// reused across every time step.
  struct Bound {
    ag::FactorVars factors;
    ag::Var w;
    ag::Var bias;
    bool has_bias = false;
  };
  Bound bind(ag::Tape& tape);
  /// Student weight as a tape variable (dense, F G^T or reconstructed MPO).
  ag::Var weight_var(const Bound& b) const;
  /// X (batch x M) -> batch x N.
  ag::Var apply(const Bound& b, ag::Var x) const;

  /// Inference cache: F/G for MPS, the reconstructed matrix for MPO/dense.
  struct Cache {
    FactorPair factors;
    Matrix w;
    Matrix bias;  ///< 1 x N or empty
  };
  Cache prepare() const;
  Matrix apply(const Cache& c, const Matrix& x) const;

 private:
  Representation kind_ = Representation::Dense;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  ShapeFactorization fact_;
  RankChains ranks_;
  std::vector<Parameter> row_cores_;  // dense: single N x M matrix
  std::vector<Parameter> col_cores_;
  Parameter bias_;
  bool has_bias_ = false;
  MpoLayout layout_;
};

/// Layer normalization of one vector. Population variance.
Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias, double eps);

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed = 0;
  std::size_t hidden = 0;
};

struct ModelSpec {
  ModelDims dims;
  LinearSpec wx;  ///< 4H x E
  LinearSpec wh;  ///< 4H x H
  double ln_eps = 1e-5;
};

/// Gate order in the stacked 4H pre-activation.
inline constexpr const char* kGateOrder = "i,f,g,o";

struct LstmState {
  Matrix h;  ///< batch x H
  Matrix c;
};

/// Embedding -> LN-LSTM with tensorized W_x/W_h -> dense output projection.
class TTLstmModel {
 public:
  TTLstmModel() = default;
  static TTLstmModel create(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const ModelDims& dims() const { return spec_.dims; }

  TTLinear& wx() { return wx_; }
  TTLinear& wh() { return wh_; }
  const TTLinear& wx() const { return wx_; }
  const TTLinear& wh() const { return wh_; }

  /// Every parameter in serialization order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  Parameter embedding;  ///< V x E
  Parameter ln_x_gain, ln_x_bias, ln_h_gain, ln_h_bias;  ///< 1 x 4H
  Parameter gate_bias;  ///< 1 x 4H
  Parameter out_w;      ///< V x H
  Parameter out_b;      ///< 1 x V

  /// Replace W_x / W_h (e.g. after load or for equivalence tests).
  void set_wx(TTLinear w);
  void set_wh(TTLinear w);

 private:
  ModelSpec spec_;
  TTLinear wx_, wh_;
};

/// All parameters of a model bound on a tape for one training step.
struct BoundModel {
  ag::Var embedding, ln_x_gain, ln_x_bias, ln_h_gain, ln_h_bias, gate_bias, out_w, out_b;
  TTLinear::Bound wx, wh;
};
BoundModel bind(ag::Tape& tape, TTLstmModel& model);

/// One LSTM step on the tape; x is batch x E, h/c are batch x H.
std::pair<ag::Var, ag::Var> lstm_step(const TTLstmModel& model, const BoundModel& b, ag::Var x,
                                      ag::Var h, ag::Var c);

struct LmForward {
  ag::Var logits;  ///< (T * batch) x V, time-major: row t*batch + lane
  LstmState final_state;
};

/// Unrolls `tokens` (batch x T row-major ids). `initial` may be null for a
/// zero state; it is treated as a constant (detached).
LmForward forward_lm(ag::Tape& tape, TTLstmModel& model, const BoundModel& b,
                     std::span<const int> tokens, std::size_t batch, std::size_t steps,
                     const LstmState* initial);

/// Reorders batch x T row-major targets into the time-major logits order.
std::vector<int> time_major(std::span<const int> ids, std::size_t batch, std::size_t steps);

/// Frozen-model inference without a tape.
class InferenceSession {
 public:
  explicit InferenceSession(const TTLstmModel& model);
  std::pair<Matrix, Matrix> step(const Matrix& x, const Matrix& h, const Matrix& c) const;
  /// Logits (T * batch) x V in time-major order; updates `state`.
  Matrix forward(std::span<const int> tokens, std::size_t batch, std::size_t steps,
                 LstmState& state) const;

 private:
  const TTLstmModel& model_;
  TTLinear::Cache wx_, wh_;
};

struct CrossEntropy {
  double nll = 0;
  double perplexity = 0;
};
CrossEntropy cross_entropy_perplexity(const Matrix& logits, std::span<const int> targets);

}  // namespace ttlstm
