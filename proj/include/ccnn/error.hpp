#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ccnn {

/// Failure categories. The CLI prints the category verbatim so scripts can
/// branch on it.
enum class ErrorKind {
  Dimension,
  NumericFault,
  Precondition,
  Config,
  State,
  Label,
  DatasetStructure,
  Stratification,
  Io,
  Decode,
  CorruptCheckpoint,
  Compatibility,
  Evaluation,
  Internal,
  Usage,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::NumericFault: return "numeric-fault";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Config: return "config";
    case ErrorKind::State: return "state";
    case ErrorKind::Label: return "label";
    case ErrorKind::DatasetStructure: return "dataset-structure";
    case ErrorKind::Stratification: return "stratification";
    case ErrorKind::Io: return "io";
    case ErrorKind::Decode: return "decode";
    case ErrorKind::CorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorKind::Compatibility: return "compatibility";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Internal: return "internal";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view category() const noexcept { return to_string(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace ccnn
