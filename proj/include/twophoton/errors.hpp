#pragma once

#include <stdexcept>
#include <string>

namespace twophoton {

// Base of every error raised by the library. The CLI maps the concrete
// categories below onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid input: malformed configuration, out-of-range parameter, bad grammar.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// The simulation step cannot resolve the fastest rate of the emitter.
class ResolutionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Problem size exceeds the configured memory budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: integrator breakdown, non-converged extrapolation,
// truncation that does not stabilise.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A denominator or a linear system is singular where the math requires it
// not to be.
class SingularityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// The Liouvillian has more than one stationary state in the requested sector.
class NonUniqueSteadyStateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// The moment equations of motion reach an operator outside the basis.
class ClosureError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Sensor results depend on the coupling beyond the leading-order tolerance.
class LeadingOrderViolation : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A normalised correlation with vanishing denominator.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

// Not enough clicks to form an estimate.
class InsufficientStatisticsError : public Error {
 public:
  using Error::Error;
};

}  // namespace twophoton
