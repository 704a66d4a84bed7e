#pragma once

#include <stdexcept>
#include <string>

namespace whinit {

/// Invalid input: violated precondition or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure (rank deficiency, transient not decayed, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The data carry no usable shifted-BLA information.
class IndistinctDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace detail
}  // namespace whinit
