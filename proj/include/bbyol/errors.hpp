#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bbyol {

// Each error family maps onto one CLI exit code.
enum class ErrorKind : int {
  Config = 1,
  Data = 2,
  Numeric = 3,
  Io = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

/// Violated preconditions of an API call (empty batch, non-scalar loss, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

/// Incompatible tensor shapes or input widths.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(std::int64_t step, const std::string& what)
      : NumericError("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace bbyol
