#pragma once

#include <stdexcept>
#include <string>

namespace mmou {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input-side failures. The CLI maps these to exit status 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// The generator's support graph has more than one communicating class.
class StructureError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SpecError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical failures. The CLI maps these to exit status 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A formula was requested outside the parameter regime it holds in.
class ApplicabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class OverflowError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class StabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Quadrature did not reach the requested tolerance; carries the best estimate.
class AccuracyError : public NumericalError {
 public:
  AccuracyError(const std::string& what, double estimate, double error)
      : NumericalError(what), estimate_(estimate), error_(error) {}

  double estimate() const noexcept { return estimate_; }
  double error_estimate() const noexcept { return error_; }

 private:
  double estimate_;
  double error_;
};

}  // namespace mmou
