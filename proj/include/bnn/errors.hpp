#pragma once

#include <stdexcept>
#include <string>

namespace bnn {

// Tensor shapes disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or infinity where a floating-point tensor is built.
class NonFiniteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (non-scalar loss, empty matrix...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dangling or out-of-order node references on a tape.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed serialized bytes: bad magic, bad version, truncation.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data that is well-formed but semantically invalid (labels out of range...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or intermediate value.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bnn
