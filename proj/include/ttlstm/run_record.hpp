#pragma once

#include <string>
#include <vector>

namespace ttlstm {

/// One CSV row of experiment output. Unused numeric fields stay empty.
struct RunRecord {
  std::string command;
  std::string config_hash;
  std::string epoch;
  std::string split;
  std::string representation;
  std::string rank;
  std::string compression_rate;
  std::string lambda;
  std::string perplexity;
  std::string mean_seconds;
  std::string sd_seconds;
  std::string runs;
  std::string timestamp;

  bool operator==(const RunRecord&) const = default;
};

const std::vector<std::string>& run_record_columns();
std::string run_record_header();
std::string format_run_record(const RunRecord& r);
RunRecord parse_run_record(const std::string& line);

/// Appends to `path`, writing the header only when the file is new or empty.
void append_run_records(const std::string& path, const std::vector<RunRecord>& rows);
std::vector<RunRecord> read_run_records(const std::string& path);

/// UTC ISO-8601 timestamp of now.
std::string utc_timestamp();

}  // namespace ttlstm
