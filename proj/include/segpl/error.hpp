#pragma once

#include <stdexcept>
#include <string>

namespace segpl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not match what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input values violate a documented precondition (non-finite, out of range).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file is missing, unreadable, or has an unexpected layout.
class FileError : public Error {
 public:
  using Error::Error;
};

/// Stored artifact disagrees with what the caller expects (version tag, config echo).
class MismatchError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss. `what()` carries the diagnostic dump.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace segpl
