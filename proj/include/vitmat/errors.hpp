#pragma once

#include <stdexcept>
#include <string>

namespace vitmat {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A NaN/Inf produced by a tensor op; what() names the op.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid model/run configuration (bad preset, mismatched params, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Out-of-range arguments to an otherwise valid call.
class InputError : public Error {
 public:
  using Error::Error;
};

// File-level failures. The subclasses distinguish checkpoint failure modes.
class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptHeaderError : public IoError {
 public:
  using IoError::IoError;
};

class TruncationError : public IoError {
 public:
  using IoError::IoError;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

class ShapeMismatchError : public IoError {
 public:
  using IoError::IoError;
};

// Dataset tree problems (empty root, class without images).
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Class missing from an alias map.
class MappingError : public Error {
 public:
  using Error::Error;
};

// A stratified split that cannot give every non-empty partition a sample.
class SplitError : public Error {
 public:
  using Error::Error;
};

// Failure inside the training loop, annotated with epoch/fold context.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Model and dataset disagree on the number (or names) of classes.
class ClassCountMismatchError : public Error {
 public:
  ClassCountMismatchError(std::size_t expected, std::size_t actual, const std::string& context)
      : Error(context + ": model has " + std::to_string(expected) + " classes, dataset has " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

}  // namespace vitmat
