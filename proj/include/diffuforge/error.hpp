#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace diffuforge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: malformed config, invalid geometry, out-of-range values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Several validation problems collected in one pass.
class ValidationErrors : public ValidationError {
 public:
  explicit ValidationErrors(std::vector<std::string> messages);
  const std::vector<std::string>& messages() const noexcept { return messages_; }

 private:
  std::vector<std::string> messages_;
};

/// Malformed or truncated file content (PNG, .hm32, JSON documents).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffuforge
