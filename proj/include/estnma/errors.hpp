#pragma once

#include <stdexcept>
#include <string>

namespace estnma {

/// Malformed or inconsistent input data (parse errors, broken invariants).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The requested analysis cannot be carried out on the available evidence.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear algebra failure: rank deficiency, ill conditioning, non-PD blocks.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace estnma
