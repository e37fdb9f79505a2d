#pragma once

#include <stdexcept>
#include <string>

namespace planeloc {

enum class ErrorKind {
  DegenerateNormal,
  DegenerateConfiguration,
  SizeMismatch,
  ShapeMismatch,
  NoForwardCache,
  EmptyBatch,
  BufferEmpty,
  SpecMismatch,
  InvalidSpec,
  InvalidSplit,
  OutOfBounds,
  InsufficientCases,
  EmptyTrace,
  IndexOutOfRange,
  ModelMissing,
  DegenerateSample,
  IoError,
  MissingDataset,
  MissingArtifacts,
  InvalidConfig,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries one of the kinds above so callers
// (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace planeloc
