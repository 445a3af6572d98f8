#pragma once

#include <stdexcept>
#include <string>

namespace nftlab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension/shape preconditions (mismatched matmul operands, odd pooling
// input, incomposable layer stacks, mask length mismatches).
struct ShapeError : Error {
  using Error::Error;
};

// Malformed binary input: bad record lengths, truncation, checksum failures,
// out-of-range label bytes.
struct FormatError : Error {
  using Error::Error;
};

struct BadMagicError : FormatError {
  using FormatError::FormatError;
};

struct VersionMismatchError : FormatError {
  using FormatError::FormatError;
};

struct IoError : Error {
  using Error::Error;
};

// Violated value-level preconditions (non-scalar backward root, non-stochastic
// targets, too-shallow model, missing PGD model, ...).
struct ValueError : Error {
  using Error::Error;
};

// Raised when a training/purification loss becomes non-finite.
struct DivergenceError : Error {
  using Error::Error;
};

// Config validation failure; `pointer` is a JSON pointer to the offending key.
struct ConfigError : Error {
  std::string pointer;
  ConfigError(std::string ptr, const std::string& what)
      : Error(what + " (at " + ptr + ")"), pointer(std::move(ptr)) {}
};

}  // namespace nftlab
