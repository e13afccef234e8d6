#ifndef GDRO_ERROR_HPP
#define GDRO_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace gdro {

enum class ErrorCode {
  NotPositiveDefinite,
  NoConvergence,
  SingularCovariance,
  DomainError,
  InvalidSampleSize,
  SampleSizeTooSmall,
  InvalidSpec,
  DimensionMismatch,
  MissingCoreSet,
  InvalidModel,
  StatusNotOptimal,
  GridTooCoarse,
  ParseError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gdro

#endif  // GDRO_ERROR_HPP
