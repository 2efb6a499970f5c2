#pragma once

#include <stdexcept>
#include <string>

namespace fdvae {

/// Base of every error thrown by the library. The CLI maps the subclasses
/// onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric operation left its domain (log of a non-positive value, overflow).
class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid input data (empty corpus, empty sentence, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an API contract (non-scalar loss, non-deterministic
/// function handed to the gradient checker, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace fdvae
