#pragma once

#include <stdexcept>
#include <string>

namespace ksi {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument or configuration. `field()` names the offending input when known.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg, std::string field = {})
      : Error(field.empty() ? msg : field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Input is well-formed but numerically degenerate (zero-norm sum, rank-deficient system).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Problem size beyond the configured cap.
class SizeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ksi
