#pragma once

#include <stdexcept>
#include <string>

namespace missvae {

/// Invalid argument, shape, or out-of-range parameter.
class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value or underflow encountered during a computation.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed external data (CSV cells, ragged rows, bundle files).
class IngestionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Operation not available for this configuration (e.g. quadrature in > 2 latent dims).
class UnsupportedError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A sampler exhausted its proposal budget.
class BudgetError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite objective.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace missvae
