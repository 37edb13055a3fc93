#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace ccs {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something malformed: wrong length, unknown label, bad config.
class InputError : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain of a function (e.g. time outside [0, T]).
class DomainError : public InputError {
 public:
  using InputError::InputError;
};

// Requested value is geometrically or numerically unreachable.
class RangeError : public InputError {
 public:
  using InputError::InputError;
};

// Problem size exceeds what an operation is configured to handle.
class CapabilityError : public InputError {
 public:
  using InputError::InputError;
};

// A computation produced a non-finite or otherwise unusable value.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, std::optional<int> step = std::nullopt)
      : Error(step ? what + " (step " + std::to_string(*step) + ")" : what), step_(step) {}

  std::optional<int> step() const noexcept { return step_; }

 private:
  std::optional<int> step_;
};

// Spherical interpolation between (nearly) collinear vectors.
class DegeneracyError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Fixed-point refinement of a DDIM inversion step diverged.
class InversionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace ccs
