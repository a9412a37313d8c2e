#pragma once

#include <stdexcept>
#include <string>

namespace fiseclip {

// Exit codes used by the command-line front end.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kIo = 2,
  kUndefinedMetric = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kValidation; }
};

// Operand extents do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A numeric argument lies outside its domain (even window, negative sigma, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A configuration key is unknown, malformed, or names something the bundle lacks.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A bundle or score manifest failed validation.
class BundleError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIo; }
};

// A metric is not defined for the given labels (e.g. no positives).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kUndefinedMetric; }
};

}  // namespace fiseclip
