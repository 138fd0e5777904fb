// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by all modules. The CLI maps these onto
// process exit codes (config -> 3, divergence -> 4, everything else -> 1).

#pragma once

#include <stdexcept>
#include <string>

namespace askd {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not conform (message carries the offending shapes).
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad argument values: out-of-range alpha, zero step, stale snapshot, ...
struct ValueError : Error {
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// A numeric kernel produced (or was handed) NaN/Inf.
struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};

// Configuration failed validation; message names the violated invariant.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// File / serialization problems.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// A training run left the finite regime; message carries seed + config dump.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace askd
