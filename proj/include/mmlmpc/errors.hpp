#pragma once

#include <stdexcept>
#include <string>

namespace mmlmpc {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simulator hit an invalid configuration: vx at/below the slip-angle
/// floor, or the vehicle at/beyond the local curvature center.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Iteration record with inconsistent trajectory/input/model lengths.
class LengthMismatchError : public Error {
 public:
  using Error::Error;
};

/// A nearest-neighbor query asked for more points than are stored.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Local regression could not be solved: too few effective samples or a
/// numerically singular normal matrix. step_index is the failing horizon
/// step when raised from a horizon-long model build, -1 otherwise.
class DegenerateDataError : public Error {
 public:
  explicit DegenerateDataError(const std::string& msg, int step = -1)
      : Error(msg), step_index(step) {}
  int step_index;
};

class InsufficientIterationsError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class MissingDataError : public Error {
 public:
  using Error::Error;
};

class BootstrapFailure : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmlmpc
