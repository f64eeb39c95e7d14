#pragma once

#include <stdexcept>
#include <string>

namespace revisit {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A normalization, band, or synthetic-parameter spec violates its invariants.
class InvalidSpecError : public Error {
 public:
  using Error::Error;
};

/// A requested band is neither present nor reachable through one substitution.
class MissingBandError : public Error {
 public:
  MissingBandError(const std::string& band)
      : Error("band '" + band + "' is not available and has no usable substitution"), band_(band) {}
  const std::string& band() const { return band_; }

 private:
  std::string band_;
};

/// Tensor shapes disagree with a contract (divisibility, channel count, T alignment).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration (unknown keys, bad enum strings).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// The synthetic generator could not satisfy its visibility guarantee.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace revisit
