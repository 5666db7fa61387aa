#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ttlstm/data.hpp"
#include "ttlstm/distill.hpp"
#include "ttlstm/keyvalue.hpp"
#include "ttlstm/nn.hpp"

namespace ttlstm {

/// Binary container: magic line, u64 LE manifest length, manifest text, then
/// one little-endian float64 blob per tensor in manifest order. Tensors are
/// declared as "tensor.<k> = name|d1,d2,...".
struct Container {
  KeyValues manifest;
  std::vector<std::pair<std::string, DenseTensor>> tensors;
};

std::string encode_container(const std::string& magic, const Container& c);
/// `allowed` lists the manifest keys this container kind accepts.
Container decode_container(const std::string& bytes, const std::string& magic,
                           const std::set<std::string>& allowed);

inline constexpr const char* kModelMagic = "TTLM1";
inline constexpr const char* kCovarianceMagic = "TTCV1";

struct SavedModel {
  TTLstmModel model;
  Vocab vocab;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  /// Free-form "train.*" entries (hyperparameters).
  std::vector<std::pair<std::string, std::string>> train_info;
};

/// Writes the model and a sibling "<path>.vocab" file.
void save_model(const std::string& path, const SavedModel& m);
SavedModel load_model(const std::string& path);
std::string encode_model(const SavedModel& m, const std::string& vocab_file);
SavedModel decode_model(const std::string& bytes, const Vocab& vocab);

/// Covariances for W_x inputs and W_h inputs.
struct CovarianceFile {
  DataCovariance sx;
  DataCovariance sh;
};
void save_covariance(const std::string& path, const CovarianceFile& c);
CovarianceFile load_covariance(const std::string& path);

}  // namespace ttlstm
