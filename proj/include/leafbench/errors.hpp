#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace leafbench {

enum class ErrorKind {
  UnknownLabel,
  EmptyDataset,
  ClassTooSmall,
  DecodeError,
  OutOfRange,
  InvalidPair,
  ShapeMismatch,
  DegenerateBatch,
  ConfigError,
  BackboneUnavailable,
  Diverged,
  CheckpointCorrupt,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::ClassTooSmall: return "ClassTooSmall";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::InvalidPair: return "InvalidPair";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::BackboneUnavailable: return "BackboneUnavailable";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::CheckpointCorrupt: return "CheckpointCorrupt";
  }
  return "Unknown";
}

/// Base of every error thrown by the toolkit. `kind()` lets callers (notably
/// the CLI) map failures onto exit codes without a catch ladder.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// True for failures caused by the data on disk rather than by configuration.
inline bool is_dataset_error(ErrorKind kind) {
  return kind == ErrorKind::UnknownLabel || kind == ErrorKind::EmptyDataset ||
         kind == ErrorKind::ClassTooSmall || kind == ErrorKind::DecodeError ||
         kind == ErrorKind::OutOfRange;
}

}  // namespace leafbench
