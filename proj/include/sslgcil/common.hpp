#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sslgcil {

/// Number of one-degree DoA output bins.
inline constexpr int kNumBins = 360;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Process exit codes shared by the library error types and the CLI.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kIo = 3,
  kMissingInput = 4,
  kNumeric = 5,
};

/// Base error carrying the exit code the CLI should report.
class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

class MissingInputError : public Error {
 public:
  explicit MissingInputError(const std::string& what) : Error(ExitCode::kMissingInput, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

}  // namespace sslgcil
