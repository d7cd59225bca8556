#pragma once

#include <stdexcept>
#include <string>

namespace dpot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or dtypes incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (solver specs, model/train configs, CLI input).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A PDE integration that cannot proceed (CFL violation, blow-up, non-finite state).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Training-time numerical failure (non-finite losses).
class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  enum class Kind { Open, Truncated, BadMagic, UnknownVersion, CrcMismatch, Inconsistent };

  IoError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace dpot
