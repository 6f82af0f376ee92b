#pragma once

#include <stdexcept>
#include <string>

namespace metricgrids {

// All library failures derive from Error so callers (the CLI in particular)
// can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Mismatched buffer or tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures: missing files, short reads, unwritable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long position)
      : Error(what + " (at byte " + std::to_string(position) + ")"),
        position_(position) {}

  long long position() const noexcept { return position_; }

 private:
  long long position_;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long long step)
      : Error(what), step_(step) {}

  long long step() const noexcept { return step_; }

 private:
  long long step_;
};

}  // namespace metricgrids
