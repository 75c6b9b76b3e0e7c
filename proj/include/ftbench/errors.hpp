#pragma once

#include <stdexcept>
#include <string>

namespace ftb {

/// Operand dimensions or indices do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, saturated precision, exhausted retry/replay budgets.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Replay budget exhausted or no valid skip target.
class CorrectionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Malformed weight container or artifact file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid workbench configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage ran before the stage producing its inputs.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& required_stage, const std::string& what)
      : std::runtime_error(what), required_stage_(required_stage) {}
  const std::string& required_stage() const { return required_stage_; }

 private:
  std::string required_stage_;
};

}  // namespace ftb
