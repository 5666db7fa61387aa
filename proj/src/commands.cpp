#include "ttlstm/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "ttlstm/error.hpp"
#include "ttlstm/model_file.hpp"
#include "ttlstm/run_record.hpp"

namespace ttlstm {

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required flag ") + flag);
  return value;
}

std::size_t full_gate_params(const ModelDims& d) { return 4 * d.hidden * (d.embed + d.hidden); }

std::size_t gate_weight_count(const TTLstmModel& m) {
  return m.wx().weight_count() + m.wh().weight_count();
}

std::string representation_label(const TTLstmModel& m) {
  if (m.wx().kind() == m.wh().kind()) return to_string(m.wx().kind());
  return std::string("wx:") + to_string(m.wx().kind()) + ";wh:" + to_string(m.wh().kind());
}

std::string rank_label(const TTLstmModel& m) {
  const auto rx = m.wx().kind() == Representation::Dense ? 0 : m.wx().ranks().max_rank();
  const auto rh = m.wh().kind() == Representation::Dense ? 0 : m.wh().ranks().max_rank();
  const auto r = std::max(rx, rh);
  return r ? std::to_string(r) : "";
}

double model_rate(const TTLstmModel& m) {
  return compression_rate(static_cast<double>(full_gate_params(m.dims())),
                          static_cast<double>(gate_weight_count(m)));
}

std::size_t info_size(const SavedModel& m, const char* key, std::size_t fallback) {
  for (const auto& [k, v] : m.train_info)
    if (k == key) return static_cast<std::size_t>(std::stoull(v));
  return fallback;
}

void copy_value(Parameter& dst, const Parameter& src) {
  if (dst.value.dims() != src.value.dims())
    throw ConfigError("teacher parameter '" + src.name + "' has a different shape");
  dst.value = src.value;
}

DistillTargets teacher_targets(const SavedModel& teacher, const std::string& source) {
  DistillTargets t;
  t.teacher.wx = teacher.model.wx().weight();
  t.teacher.wh = teacher.model.wh().weight();
  t.teacher.source = source;
  return t;
}

}  // namespace

TrainOutcome run_train(const CommandOptions& o, std::ostream& log) {
  RunConfig rc = RunConfig::parse(read_text_file(require(o.config, "--config")));
  if (o.seed) rc.train.seed = *o.seed;
  const std::string out = require(o.out, "--out");
  const std::string train_text = read_text_file(require(o.corpus, "--corpus"));

  std::optional<SavedModel> teacher;
  Vocab vocab;
  if (!o.teacher.empty()) {
    teacher = load_model(o.teacher);
    const auto& td = teacher->model.dims();
    if (td.embed != rc.model.dims.embed || td.hidden != rc.model.dims.hidden)
      throw ConfigError("teacher has E=" + std::to_string(td.embed) + ", H=" + std::to_string(td.hidden) +
                        "; student config wants E=" + std::to_string(rc.model.dims.embed) +
                        ", H=" + std::to_string(rc.model.dims.hidden));
    vocab = teacher->vocab;
  } else {
    vocab = Vocab::build(train_text, rc.vocab_max);
  }
  rc.model.dims.vocab = vocab.size();

  const auto train_ids = encode_stream(train_text, vocab);
  const auto valid_ids = o.valid.empty() ? train_ids : encode_stream(read_text_file(o.valid), vocab);
  const auto stream = make_batches(train_ids, rc.batch, rc.unroll);

  SavedModel saved;
  saved.model = TTLstmModel::create(rc.model, rc.train.seed);
  saved.vocab = vocab;
  saved.seed = rc.train.seed;
  saved.config_hash = rc.hash;
  auto& model = saved.model;

  std::optional<DistillTargets> kd;
  if (teacher) {
    // Warm start everything outside the gate stacks from the teacher.
    copy_value(model.embedding, teacher->model.embedding);
    copy_value(model.ln_x_gain, teacher->model.ln_x_gain);
    copy_value(model.ln_x_bias, teacher->model.ln_x_bias);
    copy_value(model.ln_h_gain, teacher->model.ln_h_gain);
    copy_value(model.ln_h_bias, teacher->model.ln_h_bias);
    copy_value(model.gate_bias, teacher->model.gate_bias);
    copy_value(model.out_w, teacher->model.out_w);
    copy_value(model.out_b, teacher->model.out_b);
    kd = teacher_targets(*teacher, o.teacher);
    if (rc.train.distill.mode == DistillMode::Kda) {
      const auto cov = load_covariance(require(o.covariance, "--covariance"));
      if (cov.sx.dim() != rc.model.dims.embed || cov.sh.dim() != rc.model.dims.hidden)
        throw ConfigError("covariance dimensions do not match E/H");
      kd->cx = covariance_factor(cov.sx);
      kd->ch = covariance_factor(cov.sh);
    }
  } else if (rc.train.distill.mode != DistillMode::None) {
    throw ConfigError("kd.mode " + std::string(to_string(rc.train.distill.mode)) + " needs --teacher");
  }

  const std::string records = o.records.empty() ? out + ".runs.csv" : o.records;
  const std::string chash = hex(rc.hash);
  const std::string rate = format_double(model_rate(model));
  const std::string lambda =
      rc.train.distill.mode == DistillMode::None ? "" : format_double(rc.train.distill.lambda);
  auto record = [&](const std::string& epoch, const std::string& split, const std::string& ppl) {
    RunRecord r;
    r.command = "train";
    r.config_hash = chash;
    r.epoch = epoch;
    r.split = split;
    r.representation = representation_label(model);
    r.rank = rank_label(model);
    r.compression_rate = rate;
    r.lambda = lambda;
    r.perplexity = ppl;
    r.timestamp = utc_timestamp();
    return r;
  };

  log << "train: V=" << vocab.size() << " tokens=" << train_ids.size() << " windows=" << stream.size()
      << " params=" << model.parameter_count() << " gate_rate=" << rate << "\n";
  Trainer trainer(model, rc.train, kd ? &*kd : nullptr, o.threads);
  TrainOutcome outcome;
  try {
    outcome.epochs = trainer.fit(stream, valid_ids, [&](const EpochStats& st) {
      log << "epoch " << st.epoch << " lr=" << st.lr << " train_ppl=" << st.train_perplexity
          << " valid_ppl=" << st.valid_perplexity << "\n";
      append_run_records(records, {record(std::to_string(st.epoch), "train", format_double(st.train_perplexity)),
                                   record(std::to_string(st.epoch), "valid", format_double(st.valid_perplexity))});
    });
  } catch (const NumericError& e) {
    append_run_records(records, {record("", "numeric-error", "")});
    throw;
  }
  outcome.best_valid_perplexity = std::numeric_limits<double>::infinity();
  for (const auto& st : outcome.epochs)
    outcome.best_valid_perplexity = std::min(outcome.best_valid_perplexity, st.valid_perplexity);

  const auto& t = rc.train;
  saved.train_info = {{"optimizer", t.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
                      {"lr", format_double(t.lr)},
                      {"clip", format_double(t.clip)},
                      {"lr_decay", format_double(t.lr_decay)},
                      {"epochs", std::to_string(t.epochs)},
                      {"weight_decay", format_double(t.weight_decay)},
                      {"unroll", std::to_string(rc.unroll)},
                      {"batch", std::to_string(rc.batch)},
                      {"kd_mode", to_string(t.distill.mode)},
                      {"kd_lambda", format_double(t.distill.lambda)}};
  save_model(out, saved);
  outcome.model_path = out;
  log << "saved " << out << "\n";
  return outcome;
}

double run_eval(const CommandOptions& o, std::ostream& log) {
  const auto saved = load_model(require(o.model, "--model"));
  const auto ids = encode_stream(read_text_file(require(o.corpus, "--corpus")), saved.vocab);
  const double ppl = evaluate_stream(saved.model, ids, info_size(saved, "unroll", 35));
  log << "perplexity " << format_double(ppl) << "\n";
  if (!o.records.empty()) {
    RunRecord r;
    r.command = "eval";
    r.config_hash = hex(saved.config_hash);
    r.split = "test";
    r.representation = representation_label(saved.model);
    r.rank = rank_label(saved.model);
    r.compression_rate = format_double(model_rate(saved.model));
    r.perplexity = format_double(ppl);
    r.timestamp = utc_timestamp();
    append_run_records(o.records, {r});
  }
  return ppl;
}

BenchResult bench_model(const TTLstmModel& model, const std::vector<int>& ids, std::size_t batch,
                        std::size_t steps, std::size_t runs, std::size_t discard) {
  if (runs <= discard)
    throw ConfigError("runs (" + std::to_string(runs) + ") must exceed discard (" + std::to_string(discard) + ")");
  const auto stream = make_batches(ids, batch, steps);
  BenchResult res;
  for (std::size_t run = 0; run < runs; ++run) {
    const auto start = std::chrono::steady_clock::now();
    InferenceSession session(model);
    LstmState state;
    Matrix logits;
    for (const auto& w : stream) logits = session.forward(w.inputs, batch, steps, state);
    const auto stop = std::chrono::steady_clock::now();
    res.seconds.push_back(std::chrono::duration<double>(stop - start).count());
    if (run + 1 == runs) res.last_logits = std::move(logits);
  }
  res.kept = runs - discard;
  double sum = 0;
  for (std::size_t k = discard; k < runs; ++k) sum += res.seconds[k];
  res.mean = sum / static_cast<double>(res.kept);
  double sq = 0;
  for (std::size_t k = discard; k < runs; ++k) sq += (res.seconds[k] - res.mean) * (res.seconds[k] - res.mean);
  res.sd = res.kept > 1 ? std::sqrt(sq / static_cast<double>(res.kept - 1)) : 0.0;
  return res;
}

BenchResult run_bench(const CommandOptions& o, std::ostream& log) {
  if (o.runs <= o.discard)
    throw ConfigError("runs (" + std::to_string(o.runs) + ") must exceed discard (" + std::to_string(o.discard) + ")");
  const auto saved = load_model(require(o.model, "--model"));
  const auto ids = encode_stream(read_text_file(require(o.corpus, "--corpus")), saved.vocab);
  const auto res = bench_model(saved.model, ids, info_size(saved, "batch", 20), info_size(saved, "unroll", 35),
                               o.runs, o.discard);
  log << "bench " << representation_label(saved.model) << " mean=" << format_double(res.mean)
      << "s sd=" << format_double(res.sd) << "s over " << res.kept << " runs\n";
  if (!o.records.empty()) {
    RunRecord r;
    r.command = "bench";
    r.config_hash = hex(saved.config_hash);
    r.representation = representation_label(saved.model);
    r.rank = rank_label(saved.model);
    r.compression_rate = format_double(model_rate(saved.model));
    r.mean_seconds = format_double(res.mean);
    r.sd_seconds = format_double(res.sd);
    r.runs = std::to_string(res.kept);
    r.timestamp = utc_timestamp();
    append_run_records(o.records, {r});
  }
  return res;
}

std::string cost_report_csv(const ModelSpec& spec) {
  std::ostringstream out;
  out << "matrix,kind,rows,cols,max_rank,storage,storage_bound,matvec_ops,compression_rate,efficiency_gain\n";
  const std::size_t g = 4 * spec.dims.hidden;
  std::size_t total_full = 0, total_tt = 0;
  for (const auto* item : {&spec.wx, &spec.wh}) {
    const bool is_x = item == &spec.wx;
    const std::size_t rows = g, cols = is_x ? spec.dims.embed : spec.dims.hidden;
    const std::size_t full = rows * cols;
    total_full += full;
    out << (is_x ? "wx" : "wh") << ',' << to_string(item->kind) << ',' << rows << ',' << cols << ',';
    if (item->kind == Representation::Dense) {
      total_tt += full;
      out << ',' << full << ',' << full << ',' << full << ",1,\n";
      continue;
    }
    const auto tk = item->kind == Representation::Mps ? TrainKind::Mps : TrainKind::Mpo;
    const auto rep = cost_model(item->fact, item->ranks, tk);
    total_tt += rep.storage;
    std::string gain;
    if (item->fact.row_dims.size() == item->fact.col_dims.size() && item->fact.row_dims.size() >= 2)
      gain = format_double(efficiency_gain(item->fact));
    out << rep.max_rank << ',' << rep.storage << ',' << format_double(rep.storage_bound) << ','
        << format_double(rep.matvec_ops) << ','
        << format_double(compression_rate(static_cast<double>(full), static_cast<double>(rep.storage))) << ','
        << gain << "\n";
  }
  out << "total,,,,," << total_tt << ",,,"
      << format_double(compression_rate(static_cast<double>(total_full), static_cast<double>(total_tt))) << ",\n";
  return out.str();
}

std::string run_info(const CommandOptions& o) {
  std::string csv;
  if (!o.model.empty()) {
    csv = cost_report_csv(load_model(o.model).model.spec());
  } else {
    auto rc = RunConfig::parse(read_text_file(require(o.config, "--config or --model")));
    csv = cost_report_csv(rc.model);
  }
  if (!o.covariance.empty()) {
    const auto cov = load_covariance(o.covariance);
    csv += "\ncovariance,count,min_eigenvalue,max_eigenvalue\n";
    for (const auto& [name, s] : {std::pair<const char*, const DataCovariance*>{"s_x", &cov.sx}, {"s_h", &cov.sh}}) {
      const auto [lo, hi] = eigen_extremes(*s);
      csv += std::string(name) + "," + std::to_string(s->count) + "," + format_double(lo) + "," +
             format_double(hi) + "\n";
    }
  }
  return csv;
}

CovarianceFile collect_covariance(const TTLstmModel& teacher, const std::vector<int>& ids) {
  const auto& d = teacher.dims();
  if (ids.empty()) throw DomainError("covariance pass over an empty corpus");
  InferenceSession session(teacher);
  const auto emb = teacher.embedding.value.as_matrix(d.vocab, d.embed);
  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix xs(n, static_cast<Eigen::Index>(d.embed));
  Matrix hs(n, static_cast<Eigen::Index>(d.hidden));
  Matrix h = Matrix::Zero(1, static_cast<Eigen::Index>(d.hidden));
  Matrix c = h;
  for (Eigen::Index t = 0; t < n; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || static_cast<std::size_t>(id) >= d.vocab) throw VocabError("token id out of range");
    Matrix x = emb.row(id);
    xs.row(t) = x;
    hs.row(t) = h;
    auto [h2, c2] = session.step(x, h, c);
    h = std::move(h2);
    c = std::move(c2);
  }
  return {accumulate_covariance(xs), accumulate_covariance(hs)};
}

void run_covariance(const CommandOptions& o, std::ostream& log) {
  const auto saved = load_model(require(o.model, "--model"));
  const auto ids = encode_stream(read_text_file(require(o.corpus, "--corpus")), saved.vocab);
  const auto cov = collect_covariance(saved.model, ids);
  save_covariance(require(o.out, "--out"), cov);
  log << "covariance over " << cov.sx.count << " samples written to " << o.out << "\n";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const FormatError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace ttlstm
