#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ttlstm/data.hpp"
#include "ttlstm/distill.hpp"
#include "ttlstm/keyvalue.hpp"
#include "ttlstm/nn.hpp"

namespace ttlstm {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double lr = 1.0;
  double clip = 5.0;
  /// LR multiplier applied whenever validation perplexity fails to improve.
  double lr_decay = 0.5;
  std::size_t epochs = 10;
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  DistillConfig distill;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Everything a `train` invocation needs, parsed from a key = value file.
struct RunConfig {
  std::size_t vocab_max = 2000;
  ModelSpec model;  ///< dims.vocab is filled in from the corpus
  std::size_t unroll = 35;
  std::size_t batch = 20;
  TrainConfig train;
  std::uint64_t hash = 0;  ///< FNV-1a of the config text

  static RunConfig parse(const std::string& text);
};

/// Turns wx.* / wh.* entries into a LinearSpec for a rows x cols matrix.
LinearSpec parse_linear_spec(const KeyValues& kv, const std::string& prefix, std::size_t rows,
                             std::size_t cols);

/// Teacher matrices plus the optional covariance factors for KDA.
struct DistillTargets {
  TeacherWeights teacher;
  Matrix cx;  ///< S_x = cx cx^T (KDA only)
  Matrix ch;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0;
  double train_perplexity = 0;
  double valid_perplexity = 0;
  double penalty = 0;
};

class Trainer {
 public:
  Trainer(TTLstmModel& model, TrainConfig cfg, const DistillTargets* kd = nullptr,
          std::size_t threads = 1);

  /// One pass over `stream` with carried, detached state. Returns the train
  /// perplexity.
  double train_epoch(const BatchStream& stream);

  /// Full schedule with LR decay on validation stalls; restores the
  /// best-validation parameters at the end.
  std::vector<EpochStats> fit(const BatchStream& train, const std::vector<int>& valid,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

  double learning_rate() const { return lr_; }
  double last_penalty() const { return last_penalty_; }

  /// Global-norm clip followed by one optimizer update; grads are zeroed.
  void apply_gradients();

 private:
  double step(const BatchStream::Window& w, std::size_t batch, std::size_t steps);

  TTLstmModel& model_;
  TrainConfig cfg_;
  const DistillTargets* kd_;
  std::size_t threads_;
  double lr_;
  double last_penalty_ = 0;
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t adam_t_ = 0;
  LstmState state_;
};

/// Perplexity over the whole stream with a single carried lane; every
/// token but the first is a target.
double evaluate_stream(const TTLstmModel& model, const std::vector<int>& ids, std::size_t steps);

/// Global L2 norm of all parameter gradients.
double gradient_norm(const std::vector<Parameter*>& params);

}  // namespace ttlstm
