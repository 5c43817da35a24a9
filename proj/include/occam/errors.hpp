#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace occam {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bad magic, version, or truncation in a binary container. `offset` is the
/// byte position at which the reader gave up.
class FormatError : public Error {
public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

class ArchError : public Error {
public:
  using Error::Error;
};

class MalformedTriplet : public Error {
public:
  using Error::Error;
};

class GranularityError : public Error {
public:
  using Error::Error;
};

class ShapeMismatch : public Error {
public:
  using Error::Error;
};

class TrainingDiverged : public Error {
public:
  explicit TrainingDiverged(long step)
      : Error("training diverged: non-finite loss at step " + std::to_string(step)), step_(step) {}
  long step() const noexcept { return step_; }

private:
  long step_;
};

class DecodeError : public Error {
public:
  using Error::Error;
};

class PriorViolation : public Error {
public:
  using Error::Error;
};

class PrecisionError : public Error {
public:
  using Error::Error;
};

class InvalidInput : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace occam
