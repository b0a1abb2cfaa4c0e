#pragma once

#include <concepts>
#include <stdexcept>
#include <string>

namespace dlh {

// Violated precondition of a public operation (shape/dimension mismatch, bad range).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid user configuration. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced inside the model.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or incompatible file (checkpoint, manifest, PNG).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw ContractError(msg);
}
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}
// Lazily built message for hot paths.
template <class F>
  requires std::invocable<F>
inline void require(bool cond, F&& make_msg) {
  if (!cond) throw ContractError(make_msg());
}

}  // namespace dlh
