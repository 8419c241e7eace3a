#pragma once

#include <stdexcept>
#include <string>

namespace pvgc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents, bad axes, indivisible widths.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or domain violations (64-bit verification mode).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training, or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DegenerateGraphError : public Error {
 public:
  using Error::Error;
};

class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// Manifest, image, or split problems.
class DataError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public DataError {
 public:
  using DataError::DataError;
};

class StratificationError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncationError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Checkpoint content disagrees with the model it is loaded into.
class ModelMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace pvgc
