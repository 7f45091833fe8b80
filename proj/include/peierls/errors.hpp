#pragma once

#include <stdexcept>
#include <string>

namespace peierls {

// Input or configuration that violates a documented precondition.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Anything that fails while computing: eigensolver breakdown, lost gaps,
// singular Gram matrices, obstructions.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoIsland : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotIsolated : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class TopologicalObstruction : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularTrial : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NotConnectable : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class EmptySpectrum : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace peierls
