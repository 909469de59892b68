#pragma once

#include <stdexcept>
#include <string>

namespace facnet {

/// Violated precondition on shapes or arguments (a caller bug).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input data that cannot be processed (NaN, empty sequence, all-zero labels).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Manifest content that is syntactically fine but semantically inconsistent.
class ValidationError : public std::runtime_error {
 public:
  enum class Kind { UnknownClass, MissingFeatureFile, SegmentOutOfRange, Schema };

  ValidationError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Training aborted, e.g. a non-finite gradient.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace facnet
