#pragma once

#include <stdexcept>
#include <string>

namespace fedbalance {

// Shape or layout violations between models, traces, gradients and updates.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rejected configuration: degenerate model specs, infeasible partitions,
// invalid hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files. The message names the byte offset.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Inputs for which an operation is mathematically undefined
// (e.g. cosine similarity with a zero vector).
class UndefinedInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace fedbalance
