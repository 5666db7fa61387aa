#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ttlstm {

inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kEosToken = "<eos>";

/// Frequency-ordered vocabulary; ids 0 and 1 are the unknown and
/// end-of-sentence markers. Ties are broken lexicographically.
class Vocab {
 public:
  static Vocab build(std::string_view corpus, std::size_t max_size);
  /// Reads the "token<TAB>id" format written by serialize().
  static Vocab parse(std::string_view text);

  std::size_t size() const { return tokens_.size(); }
  int unk_id() const { return 0; }
  int eos_id() const { return 1; }
  /// Id of `token`, or the unknown id.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::string serialize() const;
  /// FNV-1a of serialize().
  std::uint64_t hash() const;

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void index();
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// One id per whitespace token plus an end-of-sentence id per line.
std::vector<int> encode_stream(std::string_view corpus, const Vocab& vocab);

/// Contiguous lanes cut into batch x T windows with next-token targets.
class BatchStream {
 public:
  struct Window {
    std::vector<int> inputs;   ///< batch x T row-major (lane-major)
    std::vector<int> targets;  ///< same layout, shifted by one
  };

  BatchStream(const std::vector<int>& ids, std::size_t batch, std::size_t steps);

  std::size_t batch() const { return batch_; }
  std::size_t steps() const { return steps_; }
  std::size_t lane_length() const { return lane_len_; }
  std::size_t size() const { return windows_.size(); }
  const Window& operator[](std::size_t k) const { return windows_[k]; }
  auto begin() const { return windows_.begin(); }
  auto end() const { return windows_.end(); }
  std::size_t target_count() const { return batch_ * steps_ * windows_.size(); }

 private:
  std::size_t batch_, steps_, lane_len_;
  std::vector<Window> windows_;
};

BatchStream make_batches(const std::vector<int>& ids, std::size_t batch, std::size_t steps);

/// Add-one smoothed unigram model fitted on `train`, evaluated on `test`.
double unigram_perplexity(const std::vector<int>& train, const std::vector<int>& test,
                          std::size_t vocab_size);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace ttlstm
