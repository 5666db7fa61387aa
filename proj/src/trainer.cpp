#include "ttlstm/trainer.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <thread>

#include "ttlstm/error.hpp"
#include "ttlstm/keyvalue.hpp"

namespace ttlstm {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(clip > 0)) throw ConfigError("clip must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  distill.validate();
}

namespace {

const std::set<std::string> kConfigKeys = {
    "vocab_max", "embed",  "hidden",     "unroll",   "batch",        "epochs",
    "optimizer", "lr",     "clip",       "lr_decay", "weight_decay", "seed",
    "ln_eps",    "kd.mode", "kd.lambda", "wx.*",     "wh.*"};

const std::set<std::string> kLinearKeys = {"kind",  "row_dims", "col_dims",        "rank",
                                           "row_ranks", "col_ranks", "ranks", "col_permutation",
                                           "target_rate", "init", "init_alpha", "init_bound"};

InitKind parse_init(const std::string& s) {
  if (s == "gaussian") return InitKind::GaussianVarianceMatched;
  if (s == "flat_gaussian") return InitKind::FlatGaussian;
  if (s == "flat_uniform") return InitKind::FlatUniform;
  throw ConfigError("unknown init '" + s + "' (gaussian|flat_gaussian|flat_uniform)");
}

}  // namespace

LinearSpec parse_linear_spec(const KeyValues& kv, const std::string& p, std::size_t rows,
                             std::size_t cols) {
  for (const auto& key : kv.keys())
    if (key.rfind(p + ".", 0) == 0 && !kLinearKeys.count(key.substr(p.size() + 1)))
      throw ConfigError("config: unknown key '" + key + "'");
  LinearSpec s;
  s.rows = rows;
  s.cols = cols;
  s.kind = parse_representation(kv.get_or(p + ".kind", "dense"));
  if (s.kind == Representation::Dense) return s;

  s.fact.row_dims = kv.get_sizes(p + ".row_dims");
  s.fact.col_dims = kv.get_sizes(p + ".col_dims");
  if (s.fact.rows() != rows || s.fact.cols() != cols)
    throw ConfigError(p + ": factorization covers " + std::to_string(s.fact.rows()) + "x" +
                      std::to_string(s.fact.cols()) + ", matrix is " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  if (s.kind == Representation::Mpo && kv.has(p + ".col_permutation")) {
    const auto perm = kv.get(p + ".col_permutation");
    if (perm == "auto") s.fact.col_permutation = best_column_permutation(s.fact);
    else s.fact.col_permutation = parse_size_list(perm, p + ".col_permutation");
  }
  try {
    s.fact.validate();
  } catch (const Error& e) {
    throw ConfigError(p + ": " + e.what());
  }

  s.init.kind = parse_init(kv.get_or(p + ".init", "gaussian"));
  s.init.alpha = kv.get_double_or(p + ".init_alpha", 0.05);
  s.init.bound = kv.get_double_or(p + ".init_bound", 0.0);

  const TrainKind tk = s.kind == Representation::Mps ? TrainKind::Mps : TrainKind::Mpo;
  if (kv.has(p + ".row_ranks") || kv.has(p + ".col_ranks") || kv.has(p + ".ranks")) {
    if (tk == TrainKind::Mps) {
      s.ranks.row_ranks = kv.get_sizes(p + ".row_ranks");
      s.ranks.col_ranks = kv.get_sizes(p + ".col_ranks");
    } else {
      s.ranks.ranks = kv.get_sizes(p + ".ranks");
    }
  } else {
    std::size_t rank = 0;
    if (kv.has(p + ".rank")) rank = kv.get_size(p + ".rank");
    else if (kv.has(p + ".target_rate")) rank = pick_rank(kv.get_double(p + ".target_rate"), s.fact, tk);
    else throw ConfigError(p + ": give rank, target_rate, or explicit rank chains");
    s.ranks = RankChains::uniform(s.fact, rank, tk);
  }
  try {
    if (tk == TrainKind::Mps) check_mps_ranks(s.fact, s.ranks.row_ranks, s.ranks.col_ranks);
    else check_mpo_ranks(s.fact, s.ranks.ranks);
  } catch (const Error& e) {
    throw ConfigError(p + ": " + e.what());
  }
  return s;
}

RunConfig RunConfig::parse(const std::string& text) {
  const auto kv = KeyValues::parse(text, "config");
  kv.check_known(kConfigKeys);
  RunConfig rc;
  rc.hash = fnv1a(text);
  rc.vocab_max = kv.get_size_or("vocab_max", 2000);
  rc.model.dims.embed = kv.get_size_or("embed", 64);
  rc.model.dims.hidden = kv.get_size_or("hidden", 64);
  rc.model.ln_eps = kv.get_double_or("ln_eps", 1e-5);
  rc.unroll = kv.get_size_or("unroll", 35);
  rc.batch = kv.get_size_or("batch", 20);
  if (rc.vocab_max < 3) throw ConfigError("vocab_max must be at least 3");
  if (rc.model.dims.embed == 0 || rc.model.dims.hidden == 0 || rc.unroll == 0 || rc.batch == 0)
    throw ConfigError("embed, hidden, unroll and batch must be positive");
  const std::size_t g = 4 * rc.model.dims.hidden;
  rc.model.wx = parse_linear_spec(kv, "wx", g, rc.model.dims.embed);
  rc.model.wh = parse_linear_spec(kv, "wh", g, rc.model.dims.hidden);

  auto& t = rc.train;
  const auto opt = kv.get_or("optimizer", "sgd");
  if (opt == "sgd") t.optimizer = OptimizerKind::Sgd;
  else if (opt == "adam") t.optimizer = OptimizerKind::Adam;
  else throw ConfigError("unknown optimizer '" + opt + "' (sgd|adam)");
  t.lr = kv.get_double_or("lr", t.optimizer == OptimizerKind::Sgd ? 1.0 : 1e-3);
  t.clip = kv.get_double_or("clip", 5.0);
  t.lr_decay = kv.get_double_or("lr_decay", 0.5);
  t.epochs = kv.get_size_or("epochs", 10);
  t.weight_decay = kv.get_double_or("weight_decay", 0.0);
  t.seed = kv.has("seed") ? kv.get_u64("seed") : 1;
  t.distill.mode = parse_distill_mode(kv.get_or("kd.mode", "none"));
  t.distill.lambda = kv.get_double_or("kd.lambda", 0.0);
  t.validate();
  return rc;
}

double gradient_norm(const std::vector<Parameter*>& params) {
  double sq = 0;
  for (const auto* p : params)
    for (double g : p->grad.data()) sq += g * g;
  return std::sqrt(sq);
}

Trainer::Trainer(TTLstmModel& model, TrainConfig cfg, const DistillTargets* kd, std::size_t threads)
    : model_(model), cfg_(cfg), kd_(kd), threads_(std::max<std::size_t>(1, threads)), lr_(cfg.lr) {
  cfg_.validate();
  if (cfg_.distill.mode != DistillMode::None && !kd_)
    throw ConfigError("distillation requested without a teacher");
  if (kd_) {
    const auto& d = model_.dims();
    if (static_cast<std::size_t>(kd_->teacher.wx.rows()) != 4 * d.hidden ||
        static_cast<std::size_t>(kd_->teacher.wx.cols()) != d.embed ||
        static_cast<std::size_t>(kd_->teacher.wh.rows()) != 4 * d.hidden ||
        static_cast<std::size_t>(kd_->teacher.wh.cols()) != d.hidden)
      throw ConfigError("teacher gate stacks do not match the student's E/H");
    if (cfg_.distill.mode == DistillMode::Kda && (kd_->cx.size() == 0 || kd_->ch.size() == 0))
      throw ConfigError("activation distillation needs a covariance file");
  }
  params_ = model_.parameters();
  for (auto* p : params_) p->zero_grad();
  if (cfg_.optimizer == OptimizerKind::Adam)
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
}

void Trainer::apply_gradients() {
  const double norm = gradient_norm(params_);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double s = norm > cfg_.clip ? cfg_.clip / norm : 1.0;
  if (cfg_.optimizer == OptimizerKind::Adam) ++adam_t_;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto* p = params_[pi];
    auto w = p->value.data();
    auto g = p->grad.data();
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * (s * g[k] + cfg_.weight_decay * w[k]);
    } else {
      auto& m = m_[pi];
      auto& v = v_[pi];
      const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(adam_t_));
      const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(adam_t_));
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = s * g[k] + cfg_.weight_decay * w[k];
        m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * gk * gk;
        w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.adam_eps);
      }
    }
    p->zero_grad();
  }
}

double Trainer::step(const BatchStream::Window& w, std::size_t batch, std::size_t steps) {
  const auto hd = static_cast<Eigen::Index>(model_.dims().hidden);
  if (state_.h.rows() != static_cast<Eigen::Index>(batch)) {
    state_.h = Matrix::Zero(static_cast<Eigen::Index>(batch), hd);
    state_.c = state_.h;
  }
  const std::size_t shards = std::min(threads_, batch);
  const bool penalize = cfg_.distill.mode != DistillMode::None && cfg_.distill.lambda > 0;

  struct Shard {
    std::size_t first = 0, lanes = 0;
    double ce = 0, penalty = 0;
    LstmState out;
    std::unique_ptr<ag::Tape> tape;
    std::exception_ptr error;
  };
  std::vector<Shard> work(shards);
  for (std::size_t s = 0, at = 0; s < shards; ++s) {
    work[s].first = at;
    work[s].lanes = batch / shards + (s < batch % shards ? 1 : 0);
    at += work[s].lanes;
  }

  auto run = [&](Shard& sh, bool with_penalty) {
    try {
      sh.tape = std::make_unique<ag::Tape>();
      auto& tape = *sh.tape;
      const auto first = sh.first * steps, count = sh.lanes * steps;
      std::span<const int> in(w.inputs.data() + first, count);
      std::span<const int> tg(w.targets.data() + first, count);
      LstmState init{state_.h.middleRows(static_cast<Eigen::Index>(sh.first), static_cast<Eigen::Index>(sh.lanes)),
                     state_.c.middleRows(static_cast<Eigen::Index>(sh.first), static_cast<Eigen::Index>(sh.lanes))};
      auto b = bind(tape, model_);
      auto fw = forward_lm(tape, model_, b, in, sh.lanes, steps, &init);
      ag::Var ce = ag::softmax_cross_entropy(fw.logits, time_major(tg, sh.lanes, steps));
      sh.ce = ce.value()(0, 0);
      ag::Var loss = ag::scale(ce, static_cast<double>(sh.lanes) / static_cast<double>(batch));
      if (with_penalty) {
        const bool act = cfg_.distill.mode == DistillMode::Kda;
        ag::Var px = ag::kd_penalty(model_.wx().weight_var(b.wx), kd_->teacher.wx, act ? &kd_->cx : nullptr,
                                    cfg_.distill.lambda);
        ag::Var ph = ag::kd_penalty(model_.wh().weight_var(b.wh), kd_->teacher.wh, act ? &kd_->ch : nullptr,
                                    cfg_.distill.lambda);
        ag::Var pen = ag::add(px, ph);
        sh.penalty = pen.value()(0, 0);
        loss = ag::total_loss(loss, pen);
      }
      if (!std::isfinite(loss.value()(0, 0))) throw NumericError("non-finite training loss");
      tape.backward(loss);
      sh.out = fw.final_state;
    } catch (...) {
      sh.error = std::current_exception();
    }
  };

  if (shards == 1) {
    run(work[0], penalize);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t s = 0; s < shards; ++s) pool.emplace_back(run, std::ref(work[s]), penalize && s == 0);
    for (auto& t : pool) t.join();
  }
  for (auto& sh : work)
    if (sh.error) std::rethrow_exception(sh.error);

  if (shards == 1) {
    work[0].tape->flush_parameter_grads();
  } else {
    for (auto* p : params_) {
      auto dst = p->grad.data();
      for (auto& sh : work) {
        const auto g = sh.tape->parameter_grad(*p);
        const auto src = g.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  double ce = 0;
  for (auto& sh : work) {
    ce += sh.ce * static_cast<double>(sh.lanes) / static_cast<double>(batch);
    state_.h.middleRows(static_cast<Eigen::Index>(sh.first), static_cast<Eigen::Index>(sh.lanes)) = sh.out.h;
    state_.c.middleRows(static_cast<Eigen::Index>(sh.first), static_cast<Eigen::Index>(sh.lanes)) = sh.out.c;
  }
  last_penalty_ = work[0].penalty;
  apply_gradients();
  return ce;
}

double Trainer::train_epoch(const BatchStream& stream) {
  state_ = LstmState{};
  double nll = 0;
  for (const auto& w : stream) nll += step(w, stream.batch(), stream.steps());
  if (stream.size() == 0) throw DomainError("training stream has no windows");
  return std::exp(nll / static_cast<double>(stream.size()));
}

std::vector<EpochStats> Trainer::fit(const BatchStream& train, const std::vector<int>& valid,
                                     const std::function<void(const EpochStats&)>& on_epoch) {
  std::vector<EpochStats> out;
  double best = std::numeric_limits<double>::infinity();
  std::vector<DenseTensor> best_values;
  for (std::size_t e = 1; e <= cfg_.epochs; ++e) {
    EpochStats st;
    st.epoch = e;
    st.lr = lr_;
    st.train_perplexity = train_epoch(train);
    st.valid_perplexity = evaluate_stream(model_, valid, train.steps());
    st.penalty = last_penalty_;
    if (!std::isfinite(st.valid_perplexity)) throw NumericError("non-finite validation perplexity");
    if (st.valid_perplexity < best) {
      best = st.valid_perplexity;
      best_values.clear();
      for (auto* p : params_) best_values.push_back(p->value);
    } else {
      lr_ *= cfg_.lr_decay;
    }
    out.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  for (std::size_t k = 0; k < best_values.size(); ++k) params_[k]->value = best_values[k];
  return out;
}

double evaluate_stream(const TTLstmModel& model, const std::vector<int>& ids, std::size_t steps) {
  if (ids.size() < 2) throw DomainError("evaluation stream needs at least two tokens");
  if (steps == 0) throw DomainError("unroll length must be positive");
  InferenceSession session(model);
  LstmState state;
  double nll = 0;
  std::size_t count = 0;
  for (std::size_t at = 0; at + 1 < ids.size(); at += steps) {
    const std::size_t n = std::min(steps, ids.size() - 1 - at);
    std::span<const int> in(ids.data() + at, n);
    std::span<const int> tg(ids.data() + at + 1, n);
    const Matrix logits = session.forward(in, 1, n, state);
    nll += cross_entropy_perplexity(logits, tg).nll * static_cast<double>(n);
    count += n;
  }
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace ttlstm
