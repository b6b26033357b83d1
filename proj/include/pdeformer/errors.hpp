#pragma once

#include <stdexcept>
#include <string>

namespace pdeformer {

// Shape or argument contract violation.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A primitive produced a non-finite value.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration key, type, or value.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File format or filesystem failure.
struct IOError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pdeformer
