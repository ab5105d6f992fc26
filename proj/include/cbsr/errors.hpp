#pragma once

#include <stdexcept>
#include <string>

namespace cbsr {

// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid arguments, dimensions or configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data. Carries a 1-based row and the column name when the
// offending cell is known.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg, long row = -1,
                     std::string column = {})
      : Error(msg), row_(row), column_(std::move(column)) {}

  long row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  long row_;
  std::string column_;
};

// Function evaluated outside its domain (e.g. link(p) with p outside (0,1)).
class DomainError : public Error {
 public:
  using Error::Error;
};

// The score maximization problem has no finite maximizer: the data are
// (quasi-)separated and exact balance is infeasible. Callers should
// regularize.
class SeparatedError : public Error {
 public:
  using Error::Error;
};

// Newton system rank-deficient beyond the jitter tolerance.
class SingularHessianError : public Error {
 public:
  using Error::Error;
};

// Dual balancing problem is infeasible (mirror of SeparatedError).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbsr
