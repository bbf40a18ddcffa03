#pragma once

#include <stdexcept>
#include <string>

namespace mpnerf {

// Shape/contract violations (wrong dimensions, broken invariants).
struct InvariantError : std::runtime_error {
  explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad numerics: NaN loss, log of a nonpositive value, empty mask, ...
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed config files or CLI flag combinations.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and serialization failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mpnerf
