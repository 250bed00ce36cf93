#pragma once

#include <stdexcept>
#include <string>

namespace gpex {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed convergence, or a negative variance beyond round-off.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Input for which the result is mathematically undefined (zero variance, zero norm).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A cache or store no longer agrees with the data it summarizes.
class StateError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

/// The requested operation needs a feature the model does not have.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gpex
