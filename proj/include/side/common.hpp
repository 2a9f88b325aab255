// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>

namespace side {

static_assert(std::endian::native == std::endian::little,
              "on-disk containers assume a little-endian host");

/// Shape or dimension mismatch in a numeric operation.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent user configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A pipeline stage failed at runtime (CLI exit code 3).
struct StageError : std::runtime_error {
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("[" + stage + "] " + what), stage_name(std::move(stage)) {}
    std::string stage_name;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// FNV-1a, 64-bit. Used for payload checksums and config hashes.
inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64_str(const std::string& s) {
    return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

inline std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace side
