#pragma once

#include <stdexcept>
#include <string>

namespace vimat {

// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad inputs detected before a run starts (task files, configs,
// impossible goals). The CLI maps these to exit code 1; everything else
// raised as a plain Error is a runtime failure and maps to 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace vimat
