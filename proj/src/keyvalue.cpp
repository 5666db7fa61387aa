#include "ttlstm/keyvalue.hpp"

#include <charconv>
#include <cmath>

#include "ttlstm/error.hpp"

namespace ttlstm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& what) {
  KeyValues kv;
  kv.what_ = what;
  std::size_t start = 0, line_no = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(what + " line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(what + " line " + std::to_string(line_no) + ": empty key");
    if (kv.values_.count(key))
      throw ConfigError(what + " line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    kv.set(key, value);
    if (end == text.size()) break;
  }
  return kv;
}

void KeyValues::check_known(const std::set<std::string>& allowed) const {
  for (const auto& key : order_) {
    if (allowed.count(key)) continue;
    bool ok = false;
    for (const auto& pat : allowed) {
      if (pat.size() > 2 && pat.compare(pat.size() - 2, 2, ".*") == 0 &&
          key.compare(0, pat.size() - 1, pat, 0, pat.size() - 1) == 0) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(what_ + ": unknown key '" + key + "'");
  }
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(what_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::size_t KeyValues::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

std::size_t KeyValues::get_size_or(const std::string& key, std::size_t fallback) const {
  return has(key) ? get_size(key) : fallback;
}

std::uint64_t KeyValues::get_u64(const std::string& key) const {
  const auto& s = get(key);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(what_ + ": '" + key + "' must be a non-negative integer, got '" + s + "'");
  return v;
}

double KeyValues::get_double(const std::string& key) const {
  return parse_double(get(key), what_ + ": '" + key + "'");
}

double KeyValues::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::vector<std::size_t> KeyValues::get_sizes(const std::string& key) const {
  return parse_size_list(get(key), what_ + ": '" + key + "'");
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = value;
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string item = trim(std::string_view(text).substr(start, end - start));
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size())
      throw ConfigError(what + ": expected a comma-separated list of integers, got '" + text + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) out += ',';
    out += std::to_string(v[k]);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(const std::string& text, const std::string& what) {
  double v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || p != text.data() + text.size())
    throw ConfigError(what + " must be a number, got '" + text + "'");
  return v;
}

}  // namespace ttlstm
