#include "planeloc/error.hpp"

namespace planeloc {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateNormal: return "DegenerateNormal";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NoForwardCache: return "NoForwardCache";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::BufferEmpty: return "BufferEmpty";
    case ErrorKind::SpecMismatch: return "SpecMismatch";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidSplit: return "InvalidSplit";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::InsufficientCases: return "InsufficientCases";
    case ErrorKind::EmptyTrace: return "EmptyTrace";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::ModelMissing: return "ModelMissing";
    case ErrorKind::DegenerateSample: return "DegenerateSample";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::MissingDataset: return "MissingDataset";
    case ErrorKind::MissingArtifacts: return "MissingArtifacts";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace planeloc
