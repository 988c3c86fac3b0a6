#pragma once

#include <stdexcept>
#include <string>

namespace mvgpt {

/// Malformed input data or a violated precondition on user-supplied values.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss, exhausted resampling, or other numerical breakdown.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mvgpt
