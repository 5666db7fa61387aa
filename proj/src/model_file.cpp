#include "ttlstm/model_file.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "ttlstm/error.hpp"

namespace ttlstm {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= std::uint64_t(static_cast<unsigned char>(in[at + k])) << (8 * k);
  return v;
}

std::string tensor_decl(const std::string& name, const Extents& dims) {
  return name + "|" + join_sizes(dims);
}

}  // namespace

std::string encode_container(const std::string& magic, const Container& c) {
  KeyValues manifest = c.manifest;
  manifest.set("tensor_count", std::to_string(c.tensors.size()));
  for (std::size_t k = 0; k < c.tensors.size(); ++k)
    manifest.set("tensor." + std::to_string(k), tensor_decl(c.tensors[k].first, c.tensors[k].second.dims()));
  const std::string text = manifest.serialize();

  std::string out = magic + "\n";
  put_u64(out, text.size());
  out += text;
  for (const auto& [name, t] : c.tensors) {
    const auto d = t.data();
    const std::size_t at = out.size();
    out.resize(at + 8 * d.size());
    std::memcpy(out.data() + at, d.data(), 8 * d.size());
  }
  return out;
}

Container decode_container(const std::string& bytes, const std::string& magic,
                           const std::set<std::string>& allowed) {
  const std::string head = magic + "\n";
  if (bytes.compare(0, head.size(), head) != 0)
    throw FormatError("bad magic at offset 0: expected '" + magic + "'");
  std::size_t at = head.size();
  if (bytes.size() < at + 8) throw FormatError("truncated manifest length at offset " + std::to_string(at));
  const std::uint64_t len = get_u64(bytes, at);
  at += 8;
  if (len > bytes.size() - at)
    throw FormatError("manifest of " + std::to_string(len) + " bytes at offset " + std::to_string(at) +
                      " runs past the end of the file");
  Container c;
  try {
    c.manifest = KeyValues::parse(std::string_view(bytes).substr(at, len), "manifest");
    auto keys = allowed;
    keys.insert("tensor_count");
    keys.insert("tensor.*");
    c.manifest.check_known(keys);
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  at += len;

  std::size_t count = 0;
  try {
    count = c.manifest.get_size("tensor_count");
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  for (std::size_t k = 0; k < count; ++k) {
    const std::string key = "tensor." + std::to_string(k);
    if (!c.manifest.has(key)) throw FormatError("manifest lacks '" + key + "'");
    const auto& decl = c.manifest.get(key);
    const auto bar = decl.find('|');
    if (bar == std::string::npos) throw FormatError("malformed tensor declaration '" + decl + "'");
    const std::string name = decl.substr(0, bar);
    Extents dims;
    try {
      dims = parse_size_list(decl.substr(bar + 1), "dims of '" + name + "'");
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    std::size_t n = 1;
    for (auto d : dims) {
      if (d == 0) throw FormatError("tensor '" + name + "' declares a zero extent");
      n *= d;
    }
    if (8 * n > bytes.size() - at)
      throw FormatError("blob '" + name + "' at offset " + std::to_string(at) + " needs " +
                        std::to_string(8 * n) + " bytes, only " + std::to_string(bytes.size() - at) +
                        " remain");
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes.data() + at, 8 * n);
    at += 8 * n;
    c.tensors.emplace_back(name, DenseTensor(dims, std::move(values)));
  }
  if (at != bytes.size())
    throw FormatError(std::to_string(bytes.size() - at) + " trailing bytes after the last blob at offset " +
                      std::to_string(at));
  return c;
}

namespace {

const std::set<std::string> kModelKeys = {
    "format_version", "vocab", "embed", "hidden", "ln_eps", "gate_order", "vocab_file",
    "vocab_hash", "seed", "config_hash", "train.*", "wx.*", "wh.*"};

void put_linear(KeyValues& kv, const std::string& p, const LinearSpec& s) {
  kv.set(p + ".kind", to_string(s.kind));
  if (s.kind == Representation::Dense) return;
  kv.set(p + ".row_dims", join_sizes(s.fact.row_dims));
  kv.set(p + ".col_dims", join_sizes(s.fact.col_dims));
  if (s.kind == Representation::Mps) {
    kv.set(p + ".row_ranks", join_sizes(s.ranks.row_ranks));
    kv.set(p + ".col_ranks", join_sizes(s.ranks.col_ranks));
  } else {
    kv.set(p + ".ranks", join_sizes(s.ranks.ranks));
    if (!s.fact.col_permutation.empty())
      kv.set(p + ".col_permutation", join_sizes(s.fact.col_permutation));
  }
}

LinearSpec get_linear(const KeyValues& kv, const std::string& p) {
  LinearSpec s;
  s.kind = parse_representation(kv.get(p + ".kind"));
  if (s.kind == Representation::Dense) return s;
  s.fact.row_dims = kv.get_sizes(p + ".row_dims");
  s.fact.col_dims = kv.get_sizes(p + ".col_dims");
  if (s.kind == Representation::Mps) {
    s.ranks.row_ranks = kv.get_sizes(p + ".row_ranks");
    s.ranks.col_ranks = kv.get_sizes(p + ".col_ranks");
  } else {
    s.ranks.ranks = kv.get_sizes(p + ".ranks");
    if (kv.has(p + ".col_permutation")) s.fact.col_permutation = kv.get_sizes(p + ".col_permutation");
  }
  return s;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad hash '" + s + "'");
  return v;
}

}  // namespace

std::string encode_model(const SavedModel& m, const std::string& vocab_file) {
  const auto& spec = m.model.spec();
  Container c;
  auto& kv = c.manifest;
  kv.set("format_version", "1");
  kv.set("vocab", std::to_string(spec.dims.vocab));
  kv.set("embed", std::to_string(spec.dims.embed));
  kv.set("hidden", std::to_string(spec.dims.hidden));
  kv.set("ln_eps", format_double(spec.ln_eps));
  kv.set("gate_order", kGateOrder);
  put_linear(kv, "wx", spec.wx);
  put_linear(kv, "wh", spec.wh);
  kv.set("vocab_file", vocab_file);
  kv.set("vocab_hash", hex(m.vocab.hash()));
  kv.set("seed", std::to_string(m.seed));
  kv.set("config_hash", hex(m.config_hash));
  for (const auto& [k, v] : m.train_info) kv.set("train." + k, v);
  for (const auto* p : m.model.parameters()) c.tensors.emplace_back(p->name, p->value);
  return encode_container(kModelMagic, c);
}

SavedModel decode_model(const std::string& bytes, const Vocab& vocab) {
  Container c = decode_container(bytes, kModelMagic, kModelKeys);
  const auto& kv = c.manifest;
  SavedModel m;
  if (!kv.has("vocab_hash") || parse_hex(kv.get("vocab_hash")) != vocab.hash())
    throw ConfigError("vocabulary does not match the one recorded in the model");
  try {
    if (kv.get("format_version") != "1")
      throw FormatError("unsupported format_version '" + kv.get("format_version") + "'");
    if (kv.get("gate_order") != kGateOrder)
      throw FormatError("unsupported gate order '" + kv.get("gate_order") + "'");
    ModelSpec spec;
    spec.dims = {kv.get_size("vocab"), kv.get_size("embed"), kv.get_size("hidden")};
    spec.ln_eps = kv.get_double("ln_eps");
    spec.wx = get_linear(kv, "wx");
    spec.wh = get_linear(kv, "wh");
    if (vocab.size() != spec.dims.vocab) throw FormatError("vocabulary size differs from the model");
    m.model = TTLstmModel::create(spec, 0);
    m.vocab = vocab;
    m.seed = kv.get_u64("seed");
    m.config_hash = parse_hex(kv.get("config_hash"));
    for (const auto& k : kv.keys())
      if (k.rfind("train.", 0) == 0) m.train_info.emplace_back(k.substr(6), kv.get(k));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  } catch (const RankError& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }

  auto params = m.model.parameters();
  if (params.size() != c.tensors.size())
    throw FormatError("model declares " + std::to_string(c.tensors.size()) + " tensors, architecture needs " +
                      std::to_string(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, t] = c.tensors[k];
    if (name != params[k]->name)
      throw FormatError("blob " + std::to_string(k) + " is '" + name + "', expected '" + params[k]->name + "'");
    if (t.dims() != params[k]->value.dims())
      throw FormatError("blob '" + name + "' dims " + join_sizes(t.dims()) + " do not match the architecture (" +
                        join_sizes(params[k]->value.dims()) + ")");
    params[k]->value = std::move(t);
    params[k]->zero_grad();
  }
  return m;
}

void save_model(const std::string& path, const SavedModel& m) {
  const std::string vocab_path = path + ".vocab";
  write_text_file(vocab_path, m.vocab.serialize());
  write_text_file(path, encode_model(m, std::filesystem::path(vocab_path).filename().string()));
}

SavedModel load_model(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const ConfigError&) {
    throw FormatError("cannot read model file '" + path + "'");
  }
  Container head = decode_container(bytes, kModelMagic, kModelKeys);
  const auto vocab_path =
      (std::filesystem::path(path).parent_path() / head.manifest.get_or("vocab_file", "")).string();
  Vocab vocab;
  try {
    vocab = Vocab::parse(read_text_file(vocab_path));
  } catch (const ConfigError&) {
    throw FormatError("cannot read vocabulary '" + vocab_path + "' referenced by the model");
  }
  return decode_model(bytes, vocab);
}

void save_covariance(const std::string& path, const CovarianceFile& cf) {
  Container c;
  c.manifest.set("format_version", "1");
  c.manifest.set("count_x", std::to_string(cf.sx.count));
  c.manifest.set("count_h", std::to_string(cf.sh.count));
  auto to_tensor = [](const Matrix& s) {
    DenseTensor t({static_cast<std::size_t>(s.rows()), static_cast<std::size_t>(s.cols())}, 0.0);
    t.as_matrix(t.dim(0), t.dim(1)) = s;
    return t;
  };
  c.tensors.emplace_back("s_x", to_tensor(cf.sx.s));
  c.tensors.emplace_back("s_h", to_tensor(cf.sh.s));
  write_text_file(path, encode_container(kCovarianceMagic, c));
}

CovarianceFile load_covariance(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const ConfigError&) {
    throw FormatError("cannot read covariance file '" + path + "'");
  }
  Container c = decode_container(bytes, kCovarianceMagic, {"format_version", "count_x", "count_h"});
  if (c.tensors.size() != 2 || c.tensors[0].first != "s_x" || c.tensors[1].first != "s_h")
    throw FormatError("covariance file must hold s_x and s_h");
  CovarianceFile cf;
  auto load = [](const DenseTensor& t) {
    if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw FormatError("covariance blob is not square");
    return Matrix(t.as_matrix(t.dim(0), t.dim(1)));
  };
  try {
    cf.sx = {load(c.tensors[0].second), c.manifest.get_size("count_x")};
    cf.sh = {load(c.tensors[1].second), c.manifest.get_size("count_h")};
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  return cf;
}

}  // namespace ttlstm
