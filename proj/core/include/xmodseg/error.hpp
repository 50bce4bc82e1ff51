#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xmodseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or argument failed validation. `field()` names the
/// offending key.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A binary file could not be decoded.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& what)
      : Error("format error at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Tensor or array extents do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage could not run because an upstream artifact is missing.
class MissingArtifactError : public Error {
 public:
  MissingArtifactError(std::string stage, const std::string& what)
      : Error(what + " (rerun stage '" + stage + "')"), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace xmodseg
