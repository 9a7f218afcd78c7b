#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>

namespace fsk {

enum class Verdict { converged, max_iterations, timeout, diverged, error };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::converged: return "converged";
        case Verdict::max_iterations: return "max_iterations";
        case Verdict::timeout: return "timeout";
        case Verdict::diverged: return "diverged";
        case Verdict::error: return "error";
    }
    return "?";
}

// Run-control knobs. `timeout_seconds` is compared against whatever elapsed
// value the caller supplies: wall seconds on the TCP backend, virtual seconds
// (one per iteration) on the simulator so that verdicts stay reproducible.
struct StopPolicy {
    double threshold = 1e-5;
    std::uint64_t max_iterations = 100000;
    double timeout_seconds = std::numeric_limits<double>::infinity();
    std::uint64_t divergence_iterations = 3000;
};

/// One stop decision. Precedence: converged > timeout > diverged >
/// max_iterations; returns nullopt to continue.
inline std::optional<Verdict> evaluate_stop(const StopPolicy& p, double err_a,
                                            std::uint64_t iteration, double elapsed) {
    if (err_a <= p.threshold) return Verdict::converged;
    if (elapsed > p.timeout_seconds) return Verdict::timeout;
    if (iteration >= p.divergence_iterations) return Verdict::diverged;
    if (iteration >= p.max_iterations) return Verdict::max_iterations;
    return std::nullopt;
}

} // namespace fsk
