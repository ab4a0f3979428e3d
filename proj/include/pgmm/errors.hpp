#pragma once

#include <stdexcept>
#include <string>

namespace pgmm {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numerical 4,
// sampler initialization 5. Contract violations (bad arguments to library
// calls) are config-class failures.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : ConfigError {
  explicit ContractError(const std::string& msg) : ConfigError(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EvaluationError : NumericalError {
  explicit EvaluationError(const std::string& msg) : NumericalError(msg) {}
};

struct InitializationError : std::runtime_error {
  explicit InitializationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pgmm
