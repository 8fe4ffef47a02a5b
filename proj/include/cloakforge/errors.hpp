#pragma once

#include <stdexcept>
#include <string>

namespace cloakforge {

// Root of every typed failure in the toolkit. The CLI maps anything derived
// from Error to exit code 1 with a one-line diagnostic.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Scene generation could not place all requested objects.
struct PackingError : Error {
  using Error::Error;
};

// Masking requested on a frame with no trigger objects.
struct NoTriggerError : Error {
  using Error::Error;
};

struct InsufficientPoisonError : Error {
  InsufficientPoisonError(const std::string& msg, int required)
      : Error(msg), required_count(required) {}
  int required_count = 0;
};

struct ShapeError : Error {
  using Error::Error;
};

struct EmptyBatchError : Error {
  using Error::Error;
};

struct BatchHomogeneityError : Error {
  using Error::Error;
};

struct EmptyDatasetError : Error {
  using Error::Error;
};

struct EmptyInputError : Error {
  using Error::Error;
};

struct AlignmentError : Error {
  using Error::Error;
};

struct ClassConflictError : Error {
  using Error::Error;
};

}  // namespace cloakforge
