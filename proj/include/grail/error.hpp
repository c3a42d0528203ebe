#pragma once

#include <stdexcept>
#include <string>

namespace grail {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the named operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration, fixture or command-line input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A saved artifact (checkpoint, replay) does not match what the caller expects.
class IncompatibleArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace grail
