#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ttlstm {

/// Flat "key = value" text with '#' comments. Used by run configs and the
/// model-file manifest.
class KeyValues {
 public:
  /// Parses `text`; `what` names the source in error messages. Duplicate
  /// keys are an error.
  static KeyValues parse(std::string_view text, const std::string& what);

  /// Rejects any key not in `allowed` (exact names or "prefix.*" patterns).
  void check_known(const std::set<std::string>& allowed) const;

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  std::size_t get_size(const std::string& key) const;
  std::size_t get_size_or(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  const std::vector<std::string>& keys() const { return order_; }
  std::string serialize() const;

 private:
  std::string what_ = "input";
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& what);
std::string join_sizes(const std::vector<std::size_t>& v);
/// Shortest round-tripping decimal form, locale-independent.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);

}  // namespace ttlstm
