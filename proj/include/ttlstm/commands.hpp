#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ttlstm/model_file.hpp"
#include "ttlstm/nn.hpp"
#include "ttlstm/trainer.hpp"

namespace ttlstm {

/// Flags shared by the subcommands; each command reads what it needs.
struct CommandOptions {
  std::string config;
  std::string corpus;
  std::string valid;
  std::string teacher;
  std::string covariance;
  std::string model;
  std::string out;
  std::string records;
  std::optional<std::uint64_t> seed;
  std::size_t runs = 12;
  std::size_t discard = 2;
  std::size_t threads = 1;
};

struct TrainOutcome {
  std::vector<EpochStats> epochs;
  double best_valid_perplexity = 0;
  std::string model_path;
};

/// Trains per config; writes the model file (+ vocab) and per-epoch records.
TrainOutcome run_train(const CommandOptions& o, std::ostream& log);

/// Perplexity of a saved model over a corpus.
double run_eval(const CommandOptions& o, std::ostream& log);

struct BenchResult {
  std::vector<double> seconds;  ///< every run, including discarded ones
  double mean = 0;
  double sd = 0;
  std::size_t kept = 0;
  Matrix last_logits;  ///< logits of the final window of the last run
};

/// Times `runs` full forward passes over the corpus and keeps the last
/// runs - discard measurements.
BenchResult run_bench(const CommandOptions& o, std::ostream& log);
/// Same protocol on an in-memory model; `ids` is the encoded corpus.
BenchResult bench_model(const TTLstmModel& model, const std::vector<int>& ids, std::size_t batch,
                        std::size_t steps, std::size_t runs, std::size_t discard);

/// Cost report CSV for a config (--config) or a saved model (--model).
std::string run_info(const CommandOptions& o);
std::string cost_report_csv(const ModelSpec& spec);

/// Teacher pass collecting W_x and W_h input covariances.
CovarianceFile collect_covariance(const TTLstmModel& teacher, const std::vector<int>& ids);
void run_covariance(const CommandOptions& o, std::ostream& log);

/// Process exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

}  // namespace ttlstm
