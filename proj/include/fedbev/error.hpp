#pragma once

#include <stdexcept>
#include <string>

namespace fedbev {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or argument violates a documented contract.
/// The CLI maps these to exit code 1; all other errors map to 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Battery model collapsed (non-positive terminal voltage).
class DegenerateVoltageError : public Error {
 public:
  using Error::Error;
};

/// Malformed trip file. Message names the offending row and column.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Corrupt per-second input (negative speed or distance step).
class FeatureError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

/// Correlation is undefined for a constant series.
class CorrelationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Two parameter vectors do not share a layer partition.
class PartitionMismatchError : public Error {
 public:
  using Error::Error;
};

class SchemaVersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedbev
