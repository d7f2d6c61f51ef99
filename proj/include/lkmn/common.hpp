#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace lkmn {

// Error taxonomy. Everything thrown by the library derives from Error so
// callers can catch coarsely; the subtypes map to distinct failure classes
// (and distinct CLI exit codes).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape disagreement between tensors (names the offending axis).
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value (group counts, kernel parity, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

// Corrupt or truncated on-disk data (bad magic, CRC mismatch).
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Structurally valid file that does not match the requested configuration.
class CompatibilityError : public Error {
public:
    using Error::Error;
};

// Unsupported input format (e.g. 16-bit PNG).
class FormatError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure, always carries the path.
class IoError : public Error {
public:
    using Error::Error;
};

/// Dense NCHW extents. All axes are >= 1; there is no broadcasting.
struct Shape {
    std::int64_t n = 1;
    std::int64_t c = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;

    std::int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
    return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
           std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

inline void validate_shape(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
        throw DimensionError("shape axes must all be >= 1, got " + to_string(s));
    }
}

/// Deterministic RNG. Wraps std::mt19937_64 (whose output sequence is fixed
/// by the standard) and derives all values through explicit arithmetic so the
/// stream does not depend on library-specific distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0,1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0,n). n must be positive.
    std::int64_t uniform_int(std::int64_t n) {
        // multiply-high maps the full 64-bit range onto [0,n) without
        // platform-dependent rejection loops
        const unsigned __int128 prod =
            static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
        return static_cast<std::int64_t>(prod >> 64);
    }

    /// Derive an independent stream, e.g. one per training iteration.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 eng_;
};

/// Thread-local switch for autodiff tape recording. Inference paths disable
/// recording with NoGradGuard; each thread has its own flag.
class GradMode {
public:
    static bool enabled() { return flag_(); }
    static void set(bool on) { flag_() = on; }

private:
    static bool& flag_() {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

} // namespace lkmn
