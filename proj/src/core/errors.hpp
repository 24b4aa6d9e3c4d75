#pragma once

#include <stdexcept>
#include <string>

namespace srpmoe {

/// Base class for all engine errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration values.
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed on-disk artifact (manifest, checkpoint, embedding file).
struct FormatError : Error {
  using Error::Error;
};

/// Structurally valid file whose payload is unusable (non-finite values, ...).
struct DataError : Error {
  using Error::Error;
};

/// Tensor dimension mismatch in the network core.
struct ShapeError : Error {
  using Error::Error;
};

/// Non-finite loss or gradient; the run cannot continue.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace srpmoe
