#include "ttlstm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ttlstm/error.hpp"

namespace ttlstm {

namespace {

template <typename F>
void for_each_token(std::string_view line, F&& f) {
  std::size_t k = 0;
  while (k < line.size()) {
    while (k < line.size() && std::isspace(static_cast<unsigned char>(line[k]))) ++k;
    const std::size_t start = k;
    while (k < line.size() && !std::isspace(static_cast<unsigned char>(line[k]))) ++k;
    if (k > start) f(line.substr(start, k - start));
  }
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    f(text.substr(start, end - start));
    start = end + 1;
  }
}

}  // namespace

void Vocab::index() {
  ids_.clear();
  for (std::size_t k = 0; k < tokens_.size(); ++k) {
    if (!ids_.emplace(tokens_[k], static_cast<int>(k)).second)
      throw FormatError("duplicate vocabulary token '" + tokens_[k] + "'");
  }
}

Vocab Vocab::build(std::string_view corpus, std::size_t max_size) {
  if (max_size < 2) throw DomainError("vocabulary cap must leave room for the reserved markers");
  std::map<std::string, std::size_t, std::less<>> counts;
  for_each_token(corpus, [&](std::string_view t) {
    if (t == kUnkToken || t == kEosToken) return;
    auto it = counts.find(t);
    if (it == counts.end()) counts.emplace(std::string(t), 1);
    else ++it->second;
  });
  if (counts.empty()) throw DomainError("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  v.tokens_ = {kUnkToken, kEosToken};
  for (const auto& [tok, n] : ranked) {
    if (v.tokens_.size() >= max_size) break;
    v.tokens_.push_back(tok);
  }
  v.index();
  return v;
}

Vocab Vocab::parse(std::string_view text) {
  Vocab v;
  std::size_t line_no = 0;
  for_each_line(text, [&](std::string_view line) {
    ++line_no;
    if (line.empty()) return;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos)
      throw FormatError("vocab line " + std::to_string(line_no) + ": missing tab");
    const std::string id_text(line.substr(tab + 1));
    std::size_t used = 0;
    long id = -1;
    try {
      id = std::stol(id_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != id_text.size() || id != static_cast<long>(v.tokens_.size()))
      throw FormatError("vocab line " + std::to_string(line_no) + ": ids must be dense and ordered");
    v.tokens_.emplace_back(line.substr(0, tab));
  });
  if (v.tokens_.size() < 2 || v.tokens_[0] != kUnkToken || v.tokens_[1] != kEosToken)
    throw FormatError("vocab must start with the reserved markers");
  v.index();
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? unk_id() : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw VocabError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t k = 0; k < tokens_.size(); ++k) {
    out += tokens_[k];
    out += '\t';
    out += std::to_string(k);
    out += '\n';
  }
  return out;
}

std::uint64_t Vocab::hash() const { return fnv1a(serialize()); }

std::vector<int> encode_stream(std::string_view corpus, const Vocab& vocab) {
  std::vector<int> ids;
  for_each_line(corpus, [&](std::string_view line) {
    for_each_token(line, [&](std::string_view t) { ids.push_back(vocab.id(t)); });
    ids.push_back(vocab.eos_id());
  });
  return ids;
}

BatchStream::BatchStream(const std::vector<int>& ids, std::size_t batch, std::size_t steps)
    : batch_(batch), steps_(steps), lane_len_(0) {
  if (batch == 0 || steps == 0) throw DomainError("batch size and unroll length must be positive");
  if (ids.size() < batch * (steps + 1))
    throw DomainError("stream of " + std::to_string(ids.size()) + " tokens is shorter than batch*(T+1) = " +
                      std::to_string(batch * (steps + 1)));
  lane_len_ = ids.size() / batch;
  const std::size_t count = (lane_len_ - 1) / steps;
  windows_.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    Window win;
    win.inputs.resize(batch * steps);
    win.targets.resize(batch * steps);
    for (std::size_t lane = 0; lane < batch; ++lane) {
      const std::size_t base = lane * lane_len_ + w * steps;
      for (std::size_t t = 0; t < steps; ++t) {
        win.inputs[lane * steps + t] = ids[base + t];
        win.targets[lane * steps + t] = ids[base + t + 1];
      }
    }
    windows_.push_back(std::move(win));
  }
}

BatchStream make_batches(const std::vector<int>& ids, std::size_t batch, std::size_t steps) {
  return BatchStream(ids, batch, steps);
}

double unigram_perplexity(const std::vector<int>& train, const std::vector<int>& test,
                          std::size_t vocab_size) {
  if (vocab_size == 0 || test.empty()) throw DomainError("unigram baseline needs tokens");
  std::vector<double> counts(vocab_size, 1.0);
  for (int id : train) counts.at(static_cast<std::size_t>(id)) += 1.0;
  const double total = static_cast<double>(train.size() + vocab_size);
  double nll = 0;
  for (int id : test) nll -= std::log(counts.at(static_cast<std::size_t>(id)) / total);
  return std::exp(nll / static_cast<double>(test.size()));
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ConfigError("write to '" + path + "' failed");
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace ttlstm
