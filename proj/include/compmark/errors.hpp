#pragma once

#include <stdexcept>
#include <string>

namespace compmark {

/// Invalid input: malformed data, violated preconditions, bad parameters.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A quantity is numerically undefined for the given data (e.g. a zero normalizer).
class DegeneracyError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The requested operation exists in principle but is not provided.
class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace compmark
