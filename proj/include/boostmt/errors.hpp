#pragma once

#include <stdexcept>
#include <string>

namespace boostmt {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Vector whose norm is too small to normalize.
struct DegenerateVectorError : std::domain_error {
  using std::domain_error::domain_error;
};

// API misuse: non-scalar backward root, second backward pass, bad arguments.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed few-shot episode (missing class, unequal shot counts).
struct EpisodeShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Split does not hold enough classes or samples for the requested episode.
struct CapacityError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Training steps called out of order.
struct ProtocolError : std::logic_error {
  using std::logic_error::logic_error;
};

// On-disk file could not be parsed; message carries the line number.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Well-formed input that violates a dataset or model invariant.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad experiment configuration or command line.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace boostmt
