#pragma once

#include <stdexcept>
#include <string>

namespace dgmm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or matrix sizes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A covariance could not be factorized (and was not regularized).
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (empty index sets, bad counts, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Query against a command that has no trained density.
class UnknownCommand : public Error {
 public:
  using Error::Error;
};

/// Conditioning point lies where every component's marginal density underflows.
class OutOfSupport : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (samples, points, model).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgmm
