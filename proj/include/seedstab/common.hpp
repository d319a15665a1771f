#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace seedstab {

// ---------------------------------------------------------------------------
// Error hierarchy. Every throwing operation in the library uses one of these;
// the CLI maps them to exit codes and the tests assert on the exact type.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid ModelConfig / TrainConfig / ExperimentConfig.
struct ConfigError : Error {
    using Error::Error;
};

// Caller violated an operation precondition (empty batch, shape mismatch, ...).
struct UsageError : Error {
    using Error::Error;
};

// Malformed input file (JSON/TOML); message carries line/column when known.
struct ParseError : Error {
    using Error::Error;
};

// Filesystem failures (unreadable path, write failure).
struct IoError : Error {
    using Error::Error;
};

// Training produced a non-finite loss or gradient; message names the tensor.
struct DivergenceError : Error {
    using Error::Error;
};

// Degenerate statistics: zero-variance correlation, zero-median RBF kernel.
struct DegenerateError : Error {
    using Error::Error;
};

// Binary container failures with distinct codes.
struct StoreError : Error {
    enum class Code { corrupt_header, truncated_payload, version_mismatch };
    StoreError(Code c, const std::string& msg) : Error(msg), code(c) {}
    Code code;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit content hash. Used for corpus digests, config fingerprints
// and analysis manifests; not cryptographic and not meant to be.
// ---------------------------------------------------------------------------

class Fnv1a64 {
public:
    void update(const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ull;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    uint64_t digest() const { return hash_; }

private:
    uint64_t hash_ = 0xcbf29ce484222325ull;
};

inline uint64_t fnv1a64(const void* data, size_t len) {
    Fnv1a64 h;
    h.update(data, len);
    return h.digest();
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v);

// ---------------------------------------------------------------------------
// Deterministic Gaussian sampler: mt19937_64 + Box-Muller. We avoid
// std::normal_distribution because its output is implementation-defined;
// this stream is bit-identical for a given seed on every IEEE platform.
// ---------------------------------------------------------------------------

class GaussianRng {
public:
    explicit GaussianRng(uint64_t seed) : gen_(seed) {}

    // Uniform in (0, 1].
    double uniform_open0() {
        return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
    }
    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open0();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    float normal_f32(float stddev) { return static_cast<float>(normal()) * stddev; }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace seedstab
