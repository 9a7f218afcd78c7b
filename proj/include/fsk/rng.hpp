#pragma once

#include <cstdint>

namespace fsk {

// Counter-based 64-bit generator (splitmix64). Chosen over <random> engines
// because its output is a pure function of (seed, step index), making
// instances reproducible bit-for-bit across platforms and languages.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1]; never returns zero.
    double uniform_pos() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform integer in [lo, hi], inclusive. Modulo bias is negligible for
    /// the small ranges used here and keeps the mapping portable.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        return lo + next() % (hi - lo + 1);
    }

private:
    std::uint64_t state_;
};

/// Mixes several values into one derived seed (for per-link/per-rep streams).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c = 0, std::uint64_t d = 0) {
    SplitMix64 g(a ^ (b * 0x9E3779B97F4A7C15ULL) ^ (c * 0xC2B2AE3D27D4EB4FULL) ^
                 (d * 0x165667B19E3779F9ULL));
    return g.next();
}

} // namespace fsk
