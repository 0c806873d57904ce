#pragma once

#include <stdexcept>
#include <string>

namespace sproad {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File contents do not follow the expected encoding.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs are well-formed but semantically unusable (shape mismatch, empty set, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// A class has too few samples to fit a colour model; callers skip refinement.
class DegenerateDataError : public DataError {
 public:
  using DataError::DataError;
};

// An internal invariant linking two structures does not hold.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Bad configuration or command-line usage.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace sproad
