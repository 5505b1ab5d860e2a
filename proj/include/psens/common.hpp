#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace psens {

using Matrix = Eigen::MatrixXd;
/// Row-major storage for sample batches (rows are accessed as contiguous spans
/// in the parallel kernels).
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for all library errors.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (bad parameters, malformed config file, shape mismatch).
class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Failure while evaluating a model, score or utility (non-finite input, NaN output).
class EvalError : public Error {
  public:
    explicit EvalError(const std::string& msg) : Error(msg) {}
};

/// Numerical failure (indefinite constraint matrix, degenerate utility, repeated mode).
class NumericError : public Error {
  public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Execution policy for the data-parallel kernels. Serial and Parallel produce
/// bit-identical results; the serial variants are kept as reference
/// implementations for the tests and the benchmark tool.
enum class Exec { Serial, Parallel };

} // namespace psens
