#pragma once

#include <stdexcept>
#include <string>

namespace synthsel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix block that must be invertible (Gram matrix, constraint Schur
/// complement, donor covariance) is singular. `block()` names the offender.
class SingularityError : public Error {
 public:
  SingularityError(std::string block, const std::string& what)
      : Error(what), block_(std::move(block)) {}
  const std::string& block() const noexcept { return block_; }

 private:
  std::string block_;
};

/// The active-set engine did not certify a KKT point within its budget.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double stationarity, int iterations)
      : Error(what), stationarity_(stationarity), iterations_(iterations) {}
  double stationarity() const noexcept { return stationarity_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double stationarity_;
  int iterations_;
};

/// Invalid user configuration (grids, splits, windows, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Row/column are 1-based; 0 means "not applicable".
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what), row_(row), column_(column) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

}  // namespace synthsel
