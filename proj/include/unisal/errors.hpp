#pragma once

#include <stdexcept>
#include <string>

namespace unisal {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree; the message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class RegistryError : public Error {
 public:
  using Error::Error;
};

/// Metric or loss inputs are degenerate (no fixations, zero-sum map, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset files are missing or malformed.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint cannot be read or does not match the configuration.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Model wiring is inconsistent; the message names the junction.
class BuildError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace unisal
