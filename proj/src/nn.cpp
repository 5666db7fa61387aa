#include "ttlstm/nn.hpp"

#include <cmath>
#include <random>

#include "ttlstm/error.hpp"

namespace ttlstm {

using Index = Eigen::Index;

const char* to_string(Representation r) {
  switch (r) {
    case Representation::Dense: return "dense";
    case Representation::Mps: return "mps";
    case Representation::Mpo: return "mpo";
  }
  return "?";
}

Representation parse_representation(const std::string& s) {
  if (s == "dense") return Representation::Dense;
  if (s == "mps") return Representation::Mps;
  if (s == "mpo") return Representation::Mpo;
  throw ConfigError("unknown representation '" + s + "' (dense|mps|mpo)");
}

namespace {

DenseTensor uniform_tensor(Extents dims, double half_width, std::mt19937_64& rng) {
  DenseTensor t(std::move(dims), 0.0);
  std::uniform_real_distribution<double> dist(-half_width, half_width);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Parameter matrix_param(const std::string& name, const Matrix& m) {
  DenseTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, 0.0);
  t.as_matrix(t.dim(0), t.dim(1)) = m;
  return Parameter(name, std::move(t));
}

std::vector<Parameter> core_params(const std::string& name, const char* tag,
                                   const std::vector<DenseTensor>& cores) {
  std::vector<Parameter> out;
  for (std::size_t k = 0; k < cores.size(); ++k)
    out.emplace_back(name + "." + tag + std::to_string(k), cores[k]);
  return out;
}

std::vector<DenseTensor> core_values(const std::vector<Parameter>& ps) {
  std::vector<DenseTensor> out;
  for (const auto& p : ps) out.push_back(p.value);
  return out;
}

}  // namespace

TTLinear TTLinear::create(const std::string& name, const LinearSpec& spec, bool with_bias,
                          std::uint64_t seed) {
  switch (spec.kind) {
    case Representation::Dense: {
      if (spec.rows == 0 || spec.cols == 0) throw ShapeError(name + ": dense layer needs extents");
      std::mt19937_64 rng(seed);
      const double b = 1.0 / std::sqrt(static_cast<double>(spec.cols));
      TTLinear l;
      l.kind_ = Representation::Dense;
      l.rows_ = spec.rows;
      l.cols_ = spec.cols;
      l.row_cores_.emplace_back(name + ".w", uniform_tensor({spec.rows, spec.cols}, b, rng));
      if (with_bias) {
        l.has_bias_ = true;
        l.bias_ = Parameter(name + ".b", DenseTensor({1, spec.rows}, 0.0));
      }
      return l;
    }
    case Representation::Mps:
      return from_mps(name,
                      new_mps(spec.fact, spec.ranks.row_ranks, spec.ranks.col_ranks, spec.init, seed),
                      with_bias);
    case Representation::Mpo:
      return from_mpo(name, new_mpo(spec.fact, spec.ranks.ranks, spec.init, seed), with_bias);
  }
  throw ConfigError("unknown representation");
}

TTLinear TTLinear::from_dense(const std::string& name, const Matrix& w, bool with_bias) {
  TTLinear l;
  l.kind_ = Representation::Dense;
  l.rows_ = static_cast<std::size_t>(w.rows());
  l.cols_ = static_cast<std::size_t>(w.cols());
  l.row_cores_.push_back(matrix_param(name + ".w", w));
  if (with_bias) {
    l.has_bias_ = true;
    l.bias_ = Parameter(name + ".b", DenseTensor({1, l.rows_}, 0.0));
  }
  return l;
}

TTLinear TTLinear::from_mps(const std::string& name, const MpsTrain& train, bool with_bias) {
  TTLinear l;
  l.kind_ = Representation::Mps;
  l.fact_ = train.factorization();
  l.rows_ = l.fact_.rows();
  l.cols_ = l.fact_.cols();
  l.ranks_.row_ranks = train.row_ranks();
  l.ranks_.col_ranks = train.col_ranks();
  l.row_cores_ = core_params(name, "a", train.row_cores());
  l.col_cores_ = core_params(name, "b", train.col_cores());
  if (with_bias) {
    l.has_bias_ = true;
    l.bias_ = Parameter(name + ".b", DenseTensor({1, l.rows_}, 0.0));
  }
  return l;
}

TTLinear TTLinear::from_mpo(const std::string& name, const MpoTrain& train, bool with_bias) {
  TTLinear l;
  l.kind_ = Representation::Mpo;
  l.fact_ = train.factorization();
  l.rows_ = l.fact_.rows();
  l.cols_ = l.fact_.cols();
  l.ranks_.ranks = train.ranks();
  l.row_cores_ = core_params(name, "g", train.cores());
  l.layout_ = mpo_layout(l.fact_);
  if (with_bias) {
    l.has_bias_ = true;
    l.bias_ = Parameter(name + ".b", DenseTensor({1, l.rows_}, 0.0));
  }
  return l;
}

std::vector<Parameter*> TTLinear::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : row_cores_) out.push_back(&p);
  for (auto& p : col_cores_) out.push_back(&p);
  if (has_bias_) out.push_back(&bias_);
  return out;
}

std::vector<const Parameter*> TTLinear::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : row_cores_) out.push_back(&p);
  for (const auto& p : col_cores_) out.push_back(&p);
  if (has_bias_) out.push_back(&bias_);
  return out;
}

std::size_t TTLinear::weight_count() const {
  std::size_t n = 0;
  for (const auto& p : row_cores_) n += p.size();
  for (const auto& p : col_cores_) n += p.size();
  return n;
}

MpsTrain TTLinear::mps() const {
  if (kind_ != Representation::Mps) throw StateError("layer is not an MPS");
  return MpsTrain(fact_, core_values(row_cores_), core_values(col_cores_));
}

MpoTrain TTLinear::mpo() const {
  if (kind_ != Representation::Mpo) throw StateError("layer is not an MPO");
  return MpoTrain(fact_, core_values(row_cores_));
}

Matrix TTLinear::weight() const {
  switch (kind_) {
    case Representation::Dense: return row_cores_.front().value.as_matrix(rows_, cols_);
    case Representation::Mps: return reconstruct(mps());
    case Representation::Mpo: return reconstruct(mpo());
  }
  return {};
}

TTLinear::Bound TTLinear::bind(ag::Tape& tape) {
  Bound b;
  switch (kind_) {
    case Representation::Dense: b.w = tape.parameter(row_cores_.front(), rows_, cols_); break;
    case Representation::Mps: b.factors = ag::mps_factors(tape, row_cores_, col_cores_); break;
    case Representation::Mpo: b.w = ag::mpo_weight(tape, row_cores_, layout_); break;
  }
  if (has_bias_) {
    b.bias = tape.parameter(bias_, 1, rows_);
    b.has_bias = true;
  }
  return b;
}

ag::Var TTLinear::weight_var(const Bound& b) const {
  if (kind_ == Representation::Mps) return ag::matmul(b.factors.f, b.factors.gt);
  return b.w;
}

ag::Var TTLinear::apply(const Bound& b, ag::Var x) const {
  if (static_cast<std::size_t>(x.cols()) != cols_)
    throw ShapeError("linear layer expects width " + std::to_string(cols_) + ", got " +
                     std::to_string(x.cols()));
  ag::Var y = kind_ == Representation::Mps ? ag::mps_apply(b.factors, x)
                                           : ag::matmul(x, b.w, false, true);
  return b.has_bias ? ag::add_row(y, b.bias) : y;
}

TTLinear::Cache TTLinear::prepare() const {
  Cache c;
  if (kind_ == Representation::Mps) c.factors = build_factor_pair(mps());
  else if (kind_ == Representation::Mpo) c.w = mpo_reconstruct_counted(mpo());
  else c.w = weight();
  if (has_bias_) c.bias = bias_.value.as_matrix(1, rows_);
  return c;
}

Matrix TTLinear::apply(const Cache& c, const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != cols_)
    throw ShapeError("linear layer expects width " + std::to_string(cols_) + ", got " +
                     std::to_string(x.cols()));
  Matrix y;
  if (kind_ == Representation::Mps) y = mps_apply(c.factors, x);
  else y.noalias() = x * c.w.transpose();
  if (c.bias.size()) y.rowwise() += c.bias.row(0);
  return y;
}

Vector layer_norm(const Vector& v, const Vector& gain, const Vector& bias, double eps) {
  if (gain.size() != v.size() || bias.size() != v.size())
    throw ShapeError("layer_norm: gain/bias length differs from input");
  if (!(eps >= 0)) throw DomainError("layer_norm: epsilon must be non-negative");
  const double mean = v.mean();
  const double var = (v.array() - mean).square().mean();
  return (gain.array() * (v.array() - mean) / std::sqrt(var + eps) + bias.array()).matrix();
}

namespace {

Matrix layer_norm_rows(const Matrix& x, const Matrix& gain, const Matrix& bias, Index block,
                       double eps) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r)
    for (Index b = 0; b * block < x.cols(); ++b) {
      const auto seg = x.row(r).segment(b * block, block);
      const double mean = seg.mean();
      const double var = (seg.array() - mean).square().mean();
      out.row(r).segment(b * block, block) = (seg.array() - mean) / std::sqrt(var + eps);
    }
  out = out.array().rowwise() * gain.row(0).array();
  out.rowwise() += bias.row(0);
  return out;
}

Parameter row_param(const std::string& name, std::size_t n, double fill) {
  return Parameter(name, DenseTensor({1, n}, fill));
}

void check_linear(const LinearSpec& s, std::size_t rows, std::size_t cols, const char* name) {
  if (s.kind == Representation::Dense) return;
  if (s.fact.rows() != rows || s.fact.cols() != cols)
    throw ConfigError(std::string(name) + ": factorization gives " + std::to_string(s.fact.rows()) +
                      "x" + std::to_string(s.fact.cols()) + ", need " + std::to_string(rows) + "x" +
                      std::to_string(cols));
}

}  // namespace

TTLstmModel TTLstmModel::create(const ModelSpec& spec, std::uint64_t seed) {
  const auto& d = spec.dims;
  if (d.vocab == 0 || d.embed == 0 || d.hidden == 0)
    throw ConfigError("vocab, embed and hidden sizes must be positive");
  if (!(spec.ln_eps > 0)) throw ConfigError("layer-norm epsilon must be positive");
  const std::size_t g = 4 * d.hidden;
  ModelSpec s = spec;
  s.wx.rows = g;
  s.wx.cols = d.embed;
  s.wh.rows = g;
  s.wh.cols = d.hidden;
  check_linear(s.wx, g, d.embed, "wx");
  check_linear(s.wh, g, d.hidden, "wh");

  std::mt19937_64 rng(seed);
  TTLstmModel m;
  m.spec_ = s;
  m.embedding = Parameter("embedding", uniform_tensor({d.vocab, d.embed}, 0.1, rng));
  const auto wx_seed = rng();
  const auto wh_seed = rng();
  m.wx_ = TTLinear::create("wx", s.wx, false, wx_seed);
  m.wh_ = TTLinear::create("wh", s.wh, false, wh_seed);
  m.ln_x_gain = row_param("ln_x.gain", g, 1.0);
  m.ln_x_bias = row_param("ln_x.bias", g, 0.0);
  m.ln_h_gain = row_param("ln_h.gain", g, 1.0);
  m.ln_h_bias = row_param("ln_h.bias", g, 0.0);
  m.gate_bias = row_param("gate_bias", g, 0.0);
  auto gb = m.gate_bias.value.data();
  for (std::size_t k = d.hidden; k < 2 * d.hidden; ++k) gb[k] = 1.0;
  m.out_w = Parameter("out.w", uniform_tensor({d.vocab, d.hidden}, 0.1, rng));
  m.out_b = row_param("out.b", d.vocab, 0.0);
  return m;
}

std::vector<Parameter*> TTLstmModel::parameters() {
  std::vector<Parameter*> out{&embedding};
  for (auto* p : wx_.parameters()) out.push_back(p);
  for (auto* p : wh_.parameters()) out.push_back(p);
  for (auto* p : {&ln_x_gain, &ln_x_bias, &ln_h_gain, &ln_h_bias, &gate_bias, &out_w, &out_b})
    out.push_back(p);
  return out;
}

std::vector<const Parameter*> TTLstmModel::parameters() const {
  auto ps = const_cast<TTLstmModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t TTLstmModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

void TTLstmModel::set_wx(TTLinear w) {
  if (w.rows() != 4 * dims().hidden || w.cols() != dims().embed)
    throw ShapeError("wx must be 4H x E");
  wx_ = std::move(w);
  spec_.wx.kind = wx_.kind();
  spec_.wx.fact = wx_.factorization();
  spec_.wx.ranks = wx_.ranks();
}

void TTLstmModel::set_wh(TTLinear w) {
  if (w.rows() != 4 * dims().hidden || w.cols() != dims().hidden)
    throw ShapeError("wh must be 4H x H");
  wh_ = std::move(w);
  spec_.wh.kind = wh_.kind();
  spec_.wh.fact = wh_.factorization();
  spec_.wh.ranks = wh_.ranks();
}

BoundModel bind(ag::Tape& tape, TTLstmModel& m) {
  const auto& d = m.dims();
  const std::size_t g = 4 * d.hidden;
  BoundModel b;
  b.embedding = tape.parameter(m.embedding, d.vocab, d.embed);
  b.wx = m.wx().bind(tape);
  b.wh = m.wh().bind(tape);
  b.ln_x_gain = tape.parameter(m.ln_x_gain, 1, g);
  b.ln_x_bias = tape.parameter(m.ln_x_bias, 1, g);
  b.ln_h_gain = tape.parameter(m.ln_h_gain, 1, g);
  b.ln_h_bias = tape.parameter(m.ln_h_bias, 1, g);
  b.gate_bias = tape.parameter(m.gate_bias, 1, g);
  b.out_w = tape.parameter(m.out_w, d.vocab, d.hidden);
  b.out_b = tape.parameter(m.out_b, 1, d.vocab);
  return b;
}

std::pair<ag::Var, ag::Var> lstm_step(const TTLstmModel& model, const BoundModel& b, ag::Var x,
                                      ag::Var h, ag::Var c) {
  const std::size_t hd = model.dims().hidden;
  if (static_cast<std::size_t>(h.cols()) != hd || static_cast<std::size_t>(c.cols()) != hd ||
      h.rows() != x.rows() || c.rows() != x.rows())
    throw ShapeError("lstm_step: state shape mismatch");
  const double eps = model.spec().ln_eps;
  ag::Var ax = ag::layer_norm_blocks(model.wx().apply(b.wx, x), b.ln_x_gain, b.ln_x_bias, hd, eps);
  ag::Var ah = ag::layer_norm_blocks(model.wh().apply(b.wh, h), b.ln_h_gain, b.ln_h_bias, hd, eps);
  ag::Var a = ag::add_row(ag::add(ax, ah), b.gate_bias);
  ag::Var i = ag::sigmoid(ag::slice_cols(a, 0, hd));
  ag::Var f = ag::sigmoid(ag::slice_cols(a, hd, hd));
  ag::Var gg = ag::tanh(ag::slice_cols(a, 2 * hd, hd));
  ag::Var o = ag::sigmoid(ag::slice_cols(a, 3 * hd, hd));
  ag::Var c2 = ag::add(ag::mul(f, c), ag::mul(i, gg));
  ag::Var h2 = ag::mul(o, ag::tanh(c2));
  return {h2, c2};
}

std::vector<int> time_major(std::span<const int> ids, std::size_t batch, std::size_t steps) {
  if (ids.size() != batch * steps) throw ShapeError("token block is not batch x T");
  std::vector<int> out(ids.size());
  for (std::size_t lane = 0; lane < batch; ++lane)
    for (std::size_t t = 0; t < steps; ++t) out[t * batch + lane] = ids[lane * steps + t];
  return out;
}

namespace {

void check_tokens(std::span<const int> tokens, std::size_t batch, std::size_t steps,
                  std::size_t vocab) {
  if (tokens.size() != batch * steps) throw ShapeError("token block is not batch x T");
  for (int id : tokens)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
}

}  // namespace

LmForward forward_lm(ag::Tape& tape, TTLstmModel& model, const BoundModel& b,
                     std::span<const int> tokens, std::size_t batch, std::size_t steps,
                     const LstmState* initial) {
  const auto& d = model.dims();
  check_tokens(tokens, batch, steps, d.vocab);
  const auto bi = static_cast<Index>(batch);
  const auto hi = static_cast<Index>(d.hidden);
  ag::Var h = tape.constant(initial ? initial->h : Matrix::Zero(bi, hi));
  ag::Var c = tape.constant(initial ? initial->c : Matrix::Zero(bi, hi));
  if (h.rows() != bi || h.cols() != hi || c.rows() != bi || c.cols() != hi)
    throw ShapeError("forward_lm: carried state has the wrong shape");

  const auto order = time_major(tokens, batch, steps);
  ag::Var emb = ag::embedding(b.embedding, order);
  std::vector<ag::Var> hs;
  hs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    ag::Var x = ag::slice_rows(emb, t * batch, batch);
    std::tie(h, c) = lstm_step(model, b, x, h, c);
    hs.push_back(h);
  }
  ag::Var all = ag::concat_rows(hs);
  LmForward out;
  out.logits = ag::add_row(ag::matmul(all, b.out_w, false, true), b.out_b);
  out.final_state = LstmState{h.value(), c.value()};
  return out;
}

InferenceSession::InferenceSession(const TTLstmModel& model)
    : model_(model), wx_(model.wx().prepare()), wh_(model.wh().prepare()) {}

std::pair<Matrix, Matrix> InferenceSession::step(const Matrix& x, const Matrix& h,
                                                 const Matrix& c) const {
  const auto hd = static_cast<Index>(model_.dims().hidden);
  if (h.cols() != hd || c.cols() != hd || h.rows() != x.rows() || c.rows() != x.rows())
    throw ShapeError("lstm_step: state shape mismatch");
  const double eps = model_.spec().ln_eps;
  const auto g = static_cast<std::size_t>(4 * hd);
  Matrix a = layer_norm_rows(model_.wx().apply(wx_, x), model_.ln_x_gain.value.as_matrix(1, g),
                             model_.ln_x_bias.value.as_matrix(1, g), hd, eps) +
             layer_norm_rows(model_.wh().apply(wh_, h), model_.ln_h_gain.value.as_matrix(1, g),
                             model_.ln_h_bias.value.as_matrix(1, g), hd, eps);
  a.rowwise() += model_.gate_bias.value.as_matrix(1, g).row(0);
  auto sig = [](const auto& m) { return (1.0 / (1.0 + (-m.array()).exp())).matrix(); };
  const Matrix i = sig(a.middleCols(0, hd));
  const Matrix f = sig(a.middleCols(hd, hd));
  const Matrix gg = a.middleCols(2 * hd, hd).array().tanh().matrix();
  const Matrix o = sig(a.middleCols(3 * hd, hd));
  Matrix c2 = f.cwiseProduct(c) + i.cwiseProduct(gg);
  Matrix h2 = o.cwiseProduct(c2.array().tanh().matrix());
  return {std::move(h2), std::move(c2)};
}

Matrix InferenceSession::forward(std::span<const int> tokens, std::size_t batch, std::size_t steps,
                                 LstmState& state) const {
  const auto& d = model_.dims();
  check_tokens(tokens, batch, steps, d.vocab);
  const auto bi = static_cast<Index>(batch);
  const auto hi = static_cast<Index>(d.hidden);
  if (state.h.size() == 0) state.h = Matrix::Zero(bi, hi);
  if (state.c.size() == 0) state.c = Matrix::Zero(bi, hi);
  if (state.h.rows() != bi || state.c.rows() != bi)
    throw ShapeError("forward: carried state has the wrong shape");

  const auto emb = model_.embedding.value.as_matrix(d.vocab, d.embed);
  const auto out_w = model_.out_w.value.as_matrix(d.vocab, d.hidden);
  const auto out_b = model_.out_b.value.as_matrix(1, d.vocab);
  Matrix hs(static_cast<Index>(batch * steps), hi);
  Matrix x(bi, static_cast<Index>(d.embed));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t lane = 0; lane < batch; ++lane)
      x.row(static_cast<Index>(lane)) = emb.row(tokens[lane * steps + t]);
    auto [h2, c2] = step(x, state.h, state.c);
    state.h = std::move(h2);
    state.c = std::move(c2);
    hs.middleRows(static_cast<Index>(t * batch), bi) = state.h;
  }
  Matrix logits;
  logits.noalias() = hs * out_w.transpose();
  logits.rowwise() += out_b.row(0);
  return logits;
}

CrossEntropy cross_entropy_perplexity(const Matrix& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw ShapeError("cross entropy: one target per row required");
  if (!logits.allFinite()) throw NumericError("cross entropy: non-finite logits");
  double total = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= logits.cols()) throw VocabError("target id out of range");
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += lse - logits(r, t);
  }
  CrossEntropy ce;
  ce.nll = targets.empty() ? 0.0 : total / static_cast<double>(targets.size());
  ce.perplexity = std::exp(ce.nll);
  return ce;
}

}  // namespace ttlstm
