#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace cats {

// Storage scalar. 64-bit by default; define CATS_REAL_FLOAT for 32-bit builds
// (gradient-check tolerances assume the 64-bit build).
#ifdef CATS_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Rng = std::mt19937_64;

// Configuration / input-file problems. CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint parse or shape incompatibilities. CLI maps these to exit code 3.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required. CLI maps these to exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cats
