#pragma once

#include <stdexcept>
#include <string>

namespace dmn {

// Shape or rank mismatch between tensors.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Out-of-range index (class targets, vocabulary ids, rows).
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Structurally invalid input (empty story, empty dataset, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Binary file does not match its declared format.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Text dataset violates the line format; carries the offending line.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_number(line) {}
  std::size_t line_number;
};

// Invalid configuration (unknown variant, missing per-pass weights, infeasible task spec).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Runtime failure during optimization (non-finite loss or gradient).
struct TrainingFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dmn
