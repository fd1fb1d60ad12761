#pragma once

#include <stdexcept>
#include <string>

namespace fusegrid {

/// Tensor/volume dimensions do not satisfy an operation's contract.
class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// A configuration value is out of its admissible range.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Runtime data violates an operation's precondition (bad mask values,
/// misaligned case ids, non-scalar loss, ...).
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// File could not be read or written, or its content is malformed.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// A mask with no foreground voxels where a ROI is required.
class EmptyMaskError : public ValidationError {
public:
  explicit EmptyMaskError(const std::string& what) : ValidationError(what) {}
};

}  // namespace fusegrid
