#include <iostream>

#include <CLI11.hpp>

#include "ttlstm/commands.hpp"

int main(int argc, char** argv) {
  using namespace ttlstm;
  CLI::App app{"Tensor-train compressed LSTM language model"};
  app.require_subcommand(1);
  CommandOptions o;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "train a model from a config");
  train->add_option("--config", o.config, "run config (key = value)")->required();
  train->add_option("--corpus", o.corpus, "training text")->required();
  train->add_option("--valid", o.valid, "validation text (defaults to the training text)");
  train->add_option("--teacher", o.teacher, "trained dense model for distillation / warm start");
  train->add_option("--covariance", o.covariance, "covariance file for kd.mode = kda");
  train->add_option("--out", o.out, "model file to write")->required();
  train->add_option("--records", o.records, "run-record CSV (default <out>.runs.csv)");
  auto* seed_opt = train->add_option("--seed", seed, "overrides the config seed");
  train->add_option("--threads", o.threads, "data-parallel shards (forfeits bitwise determinism)");

  auto* eval = app.add_subcommand("eval", "perplexity of a model on a corpus");
  eval->add_option("--model", o.model)->required();
  eval->add_option("--corpus", o.corpus)->required();
  eval->add_option("--records", o.records);

  auto* bench = app.add_subcommand("bench", "time forward passes over a corpus");
  bench->add_option("--model", o.model)->required();
  bench->add_option("--corpus", o.corpus)->required();
  bench->add_option("--runs", o.runs, "total runs")->capture_default_str();
  bench->add_option("--discard", o.discard, "leading runs to drop")->capture_default_str();
  bench->add_option("--threads", o.threads, "accepted for symmetry; timing is single-threaded");
  bench->add_option("--records", o.records);

  auto* info = app.add_subcommand("info", "storage and op-count report");
  info->add_option("--config", o.config);
  info->add_option("--model", o.model);
  info->add_option("--covariance", o.covariance, "print eigenvalue extremes of a covariance file");

  auto* cov = app.add_subcommand("covariance", "teacher pass collecting input covariances");
  cov->add_option("--model", o.model, "teacher model")->required();
  cov->add_option("--corpus", o.corpus)->required();
  cov->add_option("--out", o.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (seed_opt->count()) o.seed = seed;

  try {
    if (train->parsed()) run_train(o, std::cout);
    else if (eval->parsed()) run_eval(o, std::cout);
    else if (bench->parsed()) run_bench(o, std::cout);
    else if (info->parsed()) std::cout << run_info(o);
    else if (cov->parsed()) run_covariance(o, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
