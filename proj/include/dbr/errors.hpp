#pragma once

#include <stdexcept>
#include <string>

namespace dbr {

/// Shape disagreement between tensors passed to an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration or invalid combination of settings (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model and data disagree (class map, config). Also exit code 3.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint or dataset container cannot be read back.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training (CLI exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Object used before it is ready (e.g. an untrained class model).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dbr
