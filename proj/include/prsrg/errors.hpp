#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prsrg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (wrong base point, off-manifold
/// input, dimension mismatch).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A tangent vector left the constraint ball of radius D.
class OutOfBall : public Error {
 public:
  OutOfBall(double norm, double radius)
      : Error("tangent vector norm " + std::to_string(norm) +
              " exceeds ball radius " + std::to_string(radius)),
        norm_(norm),
        radius_(radius) {}

  double norm() const noexcept { return norm_; }
  double radius() const noexcept { return radius_; }

 private:
  double norm_;
  double radius_;
};

class EmptyBatch : public Error {
 public:
  EmptyBatch() : Error("mini-batch index set is empty") {}
};

class BatchTooLarge : public Error {
 public:
  BatchTooLarge(std::size_t requested, std::size_t available)
      : Error("large batch of " + std::to_string(requested) +
              " exceeds component count " + std::to_string(available)) {}
};

/// NaN or Inf surfaced inside an iteration.
class NumericalFailure : public Error {
 public:
  NumericalFailure(std::size_t iteration, const std::string& what)
      : Error("non-finite value at iteration " + std::to_string(iteration) +
              ": " + what),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Trace data lacks a column an analysis requires.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Configuration parse or validation failure; `line()` is 1-based, 0 when the
/// problem is not tied to a particular line.
class ConfigError : public Error {
 public:
  ConfigError(std::size_t line, const std::string& message)
      : Error(line == 0 ? message
                        : "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace prsrg
