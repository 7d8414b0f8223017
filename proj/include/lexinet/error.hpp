#pragma once

#include <stdexcept>
#include <string>

namespace lexinet {

enum class ErrorCode {
  kMissingJunction,
  kDimensionMismatch,
  kInfeasibleDetected,
  kNotConverged,
  kNegativeControl,
  kSingularKkt,
  kMissingMessage,
  kTransportFailure,
  kInconsistentProblem,
  kInfeasible,
  kUnbounded,
  kMaxIterations,
  kParseError,
  kValidationError,
  kIoError,
  kUnsupported,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lexinet
