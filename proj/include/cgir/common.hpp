#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cgir {

using Scalar = double;

// Error taxonomy. The CLI maps ParameterError (and subclasses) to exit code 1
// and NumericalError (and subclasses) to exit code 2.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParameterError : Error {
  explicit ParameterError(const std::string& msg) : Error(msg) {}
};

struct ShapeError : ParameterError {
  explicit ShapeError(const std::string& msg) : ParameterError(msg) {}
};

struct StateError : ParameterError {
  explicit StateError(const std::string& msg) : ParameterError(msg) {}
};

struct IoError : ParameterError {
  explicit IoError(const std::string& msg) : ParameterError(msg) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

struct TrainingError : NumericalError {
  explicit TrainingError(const std::string& msg) : NumericalError(msg) {}
};

template <class E, class... Parts>
[[noreturn]] void raise(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw E(os.str());
}

template <class... Parts>
void check_param(bool ok, Parts&&... parts) {
  if (!ok) raise<ParameterError>(std::forward<Parts>(parts)...);
}

template <class... Parts>
void check_shape(bool ok, Parts&&... parts) {
  if (!ok) raise<ShapeError>(std::forward<Parts>(parts)...);
}

}  // namespace cgir
