#pragma once

#include <stdexcept>
#include <string>

namespace fmtk {

// Root of every error the toolkit raises. The CLI maps subclasses onto exit
// codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or component dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Embedding carries the wrong layout tag for the requested operation.
class LayoutError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// Invalid user-supplied configuration (experiment files, component cfgs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise unusable input data.
class InputError : public Error {
 public:
  using Error::Error;
};

// Unknown or duplicate registry name.
class RegistryError : public Error {
 public:
  using Error::Error;
};

// Operation invalid in the object's current state (double merge, unfitted
// predict, missing slot).
class StateError : public Error {
 public:
  using Error::Error;
};

class MissingComponentError : public StateError {
 public:
  using StateError::StateError;
};

// Checkpoint file could not be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace fmtk
