#include "gdro/error.hpp"

namespace gdro {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::InvalidSampleSize: return "InvalidSampleSize";
    case ErrorCode::SampleSizeTooSmall: return "SampleSizeTooSmall";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingCoreSet: return "MissingCoreSet";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::StatusNotOptimal: return "StatusNotOptimal";
    case ErrorCode::GridTooCoarse: return "GridTooCoarse";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace gdro
