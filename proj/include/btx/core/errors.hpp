#pragma once

#include <stdexcept>
#include <string>

namespace btx {

// Shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An id or index outside the table or sequence it addresses.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// NaN/Inf reached where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or artifact.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs that are well-formed but violate an operation's precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace btx
