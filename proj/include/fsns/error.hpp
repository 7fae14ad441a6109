#pragma once

#include <stdexcept>
#include <string>

namespace fsns {

enum class ErrorKind {
  kInvalidArgument,
  kMissingFile,
  kUnknownLabelColumn,
  kNoUsableRows,
  kNonNumericLabel,
  kDegenerateSplit,
  kInvalidSubset,
  kTooManyFeatures,
  kLengthMismatch,
  kRedundancyUnavailable,
  kEmptyInput,
  kSequenceTooLong,
  kOutOfVocabulary,
  kDivergence,
  kEmptyDecode,
  kSearchFailed,
  kInvalidConfig,
  kMissingArtifact,
  kHashMismatch,
  kIo,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace fsns
