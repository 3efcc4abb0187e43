#pragma once

#include <stdexcept>
#include <string>

namespace fff {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Numerical breakdowns (CLI exit code 3): the computation is well posed but
// the numbers gave out.

struct NumericalError : Error {
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};
struct SingularMatrix : NumericalError {
  explicit SingularMatrix(const std::string& msg) : NumericalError(msg) {}
};
struct NonFiniteLoss : NumericalError {
  explicit NonFiniteLoss(const std::string& msg) : NumericalError(msg) {}
};
struct DegenerateConfiguration : NumericalError {
  explicit DegenerateConfiguration(const std::string& msg) : NumericalError(msg) {}
};
struct DivergentGradient : NumericalError {
  explicit DivergentGradient(const std::string& msg) : NumericalError(msg) {}
};
struct NoStableBeta : NumericalError {
  explicit NoStableBeta(const std::string& msg) : NumericalError(msg) {}
};

// ---------------------------------------------------------------------------
// Contract violations (CLI exit code 2): the caller asked for something
// malformed.

struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};
struct DimensionMismatch : ContractError {
  explicit DimensionMismatch(const std::string& msg) : ContractError(msg) {}
};
struct TapeMismatch : ContractError {
  explicit TapeMismatch(const std::string& msg) : ContractError(msg) {}
};
struct ConfigError : ContractError {
  explicit ConfigError(const std::string& msg) : ContractError(msg) {}
};
struct IoError : ContractError {
  explicit IoError(const std::string& msg) : ContractError(msg) {}
};

// ---------------------------------------------------------------------------
// Verification failures (CLI exit code 1): a property this library promises
// was checked and did not hold.

struct VerificationFailure : Error {
  explicit VerificationFailure(const std::string& msg) : Error(msg) {}
};
struct IdentityViolated : VerificationFailure {
  explicit IdentityViolated(const std::string& msg) : VerificationFailure(msg) {}
};
struct BoundViolated : VerificationFailure {
  explicit BoundViolated(const std::string& msg) : VerificationFailure(msg) {}
};
struct NotCritical : VerificationFailure {
  explicit NotCritical(const std::string& msg) : VerificationFailure(msg) {}
};
struct NotSeparable : VerificationFailure {
  explicit NotSeparable(const std::string& msg) : VerificationFailure(msg) {}
};

}  // namespace fff
