#pragma once

#include <stdexcept>
#include <string>

namespace geoconf {

/// Caller supplied malformed or out-of-contract input.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A location fell outside the (extended) mesh hull.
class OutOfDomain : public std::out_of_range {
 public:
  OutOfDomain(const std::string& what, std::size_t index)
      : std::out_of_range(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Factorization, eigendecomposition or other numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hyperparameter mode could not be bracketed by the integration grid.
class GridBoundaryError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Run configuration failed validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model was asked for something it cannot deliver (e.g. map-scale
/// prediction that needs a dense eigendecomposition).
class UnsupportedOperation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace geoconf
