#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace medusa {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A setting is outside its legal range (kernel size, extents, unknown key...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An object was used in the wrong lifecycle state (backward twice,
/// eval-mode batch norm before any training step, missing gradients).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure or malformed input file.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint or file failed validation. `field` names the record that
/// could not be read.
class LoadError : public IoError {
 public:
  LoadError(std::string field, const std::string& what)
      : IoError("checkpoint load failed at '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A row of a dataset manifest could not be loaded.
class DataError : public IoError {
 public:
  DataError(std::size_t row, const std::string& what)
      : IoError("manifest row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Components of a model and a checkpoint (or two models) do not match.
class IncompatibleError : public Error {
 public:
  explicit IncompatibleError(const std::string& what, std::vector<std::string> missing = {})
      : Error(what), missing_(std::move(missing)) {}
  /// Names the target expected but the source lacks, when that is the cause.
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

}  // namespace medusa
