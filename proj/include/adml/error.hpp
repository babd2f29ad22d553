#pragma once

#include <stdexcept>
#include <string>

namespace adml {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents disagree (matmul inner extent, conv channels, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A class label is outside [0, classes).
class LabelError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A ParamSet does not match the schema a model expects.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Binary checkpoint / raw-tensor file is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset files are missing or unreadable.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Samples of one source do not share a shape.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace adml
