#pragma once

#include <stdexcept>
#include <string>

namespace embfat {

// Thrown when tensor shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file (dataset, embedding file, ...).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or other numeric failures at runtime.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad checkpoint or other binary artifact.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace embfat
