#pragma once

#include <stdexcept>
#include <string>

namespace mocc {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or image geometry that do not fit together.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Argument outside its documented domain (empty batch, rate >= 1, ...).
class ParameterError : public Error {
public:
  using Error::Error;
};

// Operation invoked in a state that does not support it.
class StateError : public Error {
public:
  using Error::Error;
};

// NaN/Inf in a loss or gradient, or training divergence.
class NumericError : public Error {
public:
  using Error::Error;
};

// Manifest rows, image files or checkpoint contents that cannot be used.
class DataError : public Error {
public:
  using Error::Error;
};

class IngestionError : public DataError {
public:
  using DataError::DataError;
};

class FormatError : public DataError {
public:
  using DataError::DataError;
};

class VersionError : public DataError {
public:
  using DataError::DataError;
};

class CorruptionError : public DataError {
public:
  using DataError::DataError;
};

class IoError : public DataError {
public:
  using DataError::DataError;
};

} // namespace mocc
