#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cqcim {

/// Base of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A hyperparameter or configuration value is out of its domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A computation produced (or was fed) a non-finite value or failed to converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An object was used in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data.
class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad command line or configuration document.
class UsageError : public Error {
 public:
  using Error::Error;
};

using WarningSink = std::function<void(std::string_view)>;

/// Emits a non-fatal warning. Goes to stderr unless a sink is installed.
void warn(std::string_view message);

/// Replaces the warning sink; returns the previous one. Pass an empty
/// function to restore stderr output.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace cqcim
