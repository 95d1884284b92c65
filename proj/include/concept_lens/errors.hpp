#pragma once

#include <stdexcept>
#include <string>

namespace concept_lens {

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or type invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// A persisted artifact exists but its contents are malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace concept_lens
