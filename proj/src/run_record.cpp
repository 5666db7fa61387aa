#include "ttlstm/run_record.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "ttlstm/data.hpp"
#include "ttlstm/error.hpp"

namespace ttlstm {

namespace {

std::vector<std::string RunRecord::*> fields() {
  return {&RunRecord::command,          &RunRecord::config_hash, &RunRecord::epoch,
          &RunRecord::split,            &RunRecord::representation, &RunRecord::rank,
          &RunRecord::compression_rate, &RunRecord::lambda,      &RunRecord::perplexity,
          &RunRecord::mean_seconds,     &RunRecord::sd_seconds,  &RunRecord::runs,
          &RunRecord::timestamp};
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        out.back() += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV row");
  return out;
}

}  // namespace

const std::vector<std::string>& run_record_columns() {
  static const std::vector<std::string> cols = {
      "command", "config_hash", "epoch",      "split",      "representation", "rank",    "compression_rate",
      "lambda",  "perplexity",  "mean_seconds", "sd_seconds", "runs",         "timestamp"};
  return cols;
}

std::string run_record_header() {
  std::string out;
  for (const auto& c : run_record_columns()) out += (out.empty() ? "" : ",") + c;
  return out;
}

std::string format_run_record(const RunRecord& r) {
  std::string out;
  bool first = true;
  for (auto f : fields()) {
    if (!first) out += ',';
    out += quote(r.*f);
    first = false;
  }
  return out;
}

RunRecord parse_run_record(const std::string& line) {
  const auto cells = split_csv(line);
  const auto fs = fields();
  if (cells.size() != fs.size())
    throw FormatError("run record has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(fs.size()));
  RunRecord r;
  for (std::size_t k = 0; k < fs.size(); ++k) r.*fs[k] = cells[k];
  return r;
}

void append_run_records(const std::string& path, const std::vector<RunRecord>& rows) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw ConfigError("cannot append to '" + path + "'");
  if (fresh) out << run_record_header() << '\n';
  for (const auto& r : rows) out << format_run_record(r) << '\n';
}

std::vector<RunRecord> read_run_records(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<RunRecord> out;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != run_record_header()) throw FormatError("unexpected run-record header");
      header = false;
      continue;
    }
    out.push_back(parse_run_record(line));
  }
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace ttlstm
