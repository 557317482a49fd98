#pragma once

#include <stdexcept>
#include <string>

namespace omnishape {

// Base of every error raised by the library. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Array extents or channel counts that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input outside the domain an operation is defined on (e.g. a point outside the unit cube).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class UsageError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public Error {
 public:
  using Error::Error;
};

// Rank-deficient correspondence configuration.
class RankError : public Error {
 public:
  using Error::Error;
};

// Too few valid NORF points survive filtering.
class InsufficientEvidenceError : public Error {
 public:
  using Error::Error;
};

class RegistrationFailedError : public Error {
 public:
  using Error::Error;
};

// Non-finite value during training or sampling; carries the step at which it appeared.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// A file or artifact failed its type invariants on load.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace omnishape
