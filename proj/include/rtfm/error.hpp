#pragma once

#include <stdexcept>
#include <string>

namespace rtfm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, modes or ranks that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (grid sizes, fold counts, probabilities...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-convergence, singular or degenerate spectra.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File and stream failures, including corrupt inputs.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtfm
