#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mixclass {

// Invalid argument, configuration or family/link pairing.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Response value outside the support of a family (negative count, non-finite y, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite intermediate while evaluating a likelihood.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t row = -1)
      : std::runtime_error(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what),
        row_(row) {}
  std::ptrdiff_t row() const noexcept { return row_; }

 private:
  std::ptrdiff_t row_;
};

// An observed category with zero probability, or a V* stratum with no rows.
class DegenerateCategoryError : public std::runtime_error {
 public:
  DegenerateCategoryError(const std::string& what, std::size_t category)
      : std::runtime_error(what), category_(category) {}
  std::size_t category() const noexcept { return category_; }

 private:
  std::size_t category_;
};

// Parameter on the boundary of its space where derivatives are undefined.
class BoundaryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Iterative routine stopped before reaching its tolerance. Carries the best estimate.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best_estimate, double error_estimate = 0.0)
      : std::runtime_error(what), best_(best_estimate), err_(error_estimate) {}
  double best_estimate() const noexcept { return best_; }
  double error_estimate() const noexcept { return err_; }

 private:
  double best_;
  double err_;
};

// Malformed input file.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace mixclass
