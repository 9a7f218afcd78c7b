#pragma once

#include <stdexcept>
#include <string>

namespace fsk {

struct NonFiniteCost : std::runtime_error {
    explicit NonFiniteCost(const std::string& what) : std::runtime_error(what) {}
};

struct NonPositiveEpsilon : std::runtime_error {
    explicit NonPositiveEpsilon(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a Sinkhorn denominator hits the underflow floor: the
// regularization is too small for the value range of the kernel.
struct UnderflowDivide : std::runtime_error {
    explicit UnderflowDivide(const std::string& what) : std::runtime_error(what) {}
};

struct IndivisibleDimension : std::runtime_error {
    explicit IndivisibleDimension(const std::string& what) : std::runtime_error(what) {}
};

struct MissingBlock : std::runtime_error {
    explicit MissingBlock(const std::string& what) : std::runtime_error(what) {}
};

struct DuplicateBlock : std::runtime_error {
    explicit DuplicateBlock(const std::string& what) : std::runtime_error(what) {}
};

struct FrameError : std::runtime_error {
    explicit FrameError(const std::string& what) : std::runtime_error(what) {}
};

struct PeerLost : std::runtime_error {
    explicit PeerLost(const std::string& what) : std::runtime_error(what) {}
};

struct BackpressureDropped : std::runtime_error {
    explicit BackpressureDropped(const std::string& what) : std::runtime_error(what) {}
};

struct BracketNotFound : std::runtime_error {
    explicit BracketNotFound(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateSum : std::runtime_error {
    explicit DegenerateSum(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace fsk
