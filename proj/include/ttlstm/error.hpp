#pragma once

#include <stdexcept>
#include <string>

namespace ttlstm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TTLSTM_DEFINE_ERROR(Name)            \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

TTLSTM_DEFINE_ERROR(IndexError);
TTLSTM_DEFINE_ERROR(ShapeError);
TTLSTM_DEFINE_ERROR(RankError);
TTLSTM_DEFINE_ERROR(CapacityError);
TTLSTM_DEFINE_ERROR(DomainError);
TTLSTM_DEFINE_ERROR(StateError);
TTLSTM_DEFINE_ERROR(NumericError);
TTLSTM_DEFINE_ERROR(VocabError);
TTLSTM_DEFINE_ERROR(ConfigError);
TTLSTM_DEFINE_ERROR(FormatError);

#undef TTLSTM_DEFINE_ERROR

}  // namespace ttlstm
