#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mkmtrl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  explicit ParseError(const std::string& what) : ParseError(what, 0) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised by the fixed-point weight updates when the iteration cap is hit
/// with a residual above the acceptance threshold.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, int task = -1)
      : Error(task >= 0 ? "task " + std::to_string(task) + ": " + what : what), task_(task) {}
  int task() const noexcept { return task_; }

 private:
  int task_;
};

enum class TaskKind { classification, regression };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

/// Runs fn(i) for i in [0, n) over up to `workers` threads. Results must be
/// written to per-index slots; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers = 0);

/// Default worker count: MKMTRL_WORKERS if set, else hardware concurrency.
int default_workers();

}  // namespace mkmtrl
