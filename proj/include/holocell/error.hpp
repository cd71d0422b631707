// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <concepts>
#include <stdexcept>
#include <string>

namespace holocell {

/// Caller broke a documented precondition (shape, length, range).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A key element has zero modulus and cannot be inverted.
class SingularKeyError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A partial-key query with no known key elements.
class DegenerateQueryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Unreadable, missing or malformed input/output files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss or gradient became non-finite during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

/// Builds the message only on failure; for checks on hot paths.
template <std::invocable F>
void require(bool condition, F&& message) {
  if (!condition) throw ContractViolation(message());
}

}  // namespace holocell
