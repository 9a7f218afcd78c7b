#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "fsk/core.hpp"
#include "fsk/errors.hpp"
#include "fsk/rng.hpp"

#include <json.hpp>

namespace fsk {

enum class CondClass { well, medium, ill };

inline const char* to_string(CondClass c) {
    switch (c) {
        case CondClass::well: return "well";
        case CondClass::medium: return "medium";
        case CondClass::ill: return "ill";
    }
    return "?";
}

inline CondClass cond_class_from_string(const std::string& s) {
    if (s == "well") return CondClass::well;
    if (s == "medium") return CondClass::medium;
    if (s == "ill") return CondClass::ill;
    throw ConfigError("unknown cond_class '" + s + "'");
}

// Synthetic instance axes. `c_hint` fixes the block grid used by the
// off-diagonal sparsification; `epsilon` is carried into the Problem.
struct GenSpec {
    std::size_t n = 1000;
    std::size_t N = 1;
    double sparsity = 0.0;        // probability of a high-cost entry off-diagonal
    CondClass cond_class = CondClass::well;
    int c_hint = 2;
    std::uint64_t seed = 0;
    double epsilon = 0.05;
};

// Draw order is part of the format: a, then B column by column, then C
// row-major, then one uniform per off-diagonal-block entry (row-major).
// "Sparse" entries are set to 10 * max(C) rather than zero so the kernel
// stays strictly positive. Condition classes multiply row i of C by
// span^{i/(n-1)} / span with span in {1, 1e3, 1e6}: the top rows keep full
// cost contrast and the leading rows flatten toward zero cost, widening the
// kernel's spectrum without flooring it.
inline Problem generate(const GenSpec& spec) {
    if (spec.sparsity < 0.0 || spec.sparsity > 1.0)
        throw ConfigError("sparsity must lie in [0, 1]");
    if (spec.n == 0 || spec.N == 0) throw ConfigError("n and N must be positive");
    if (spec.c_hint <= 0 || spec.n % static_cast<std::size_t>(spec.c_hint) != 0)
        throw ConfigError("c_hint must divide n");
    if (spec.epsilon <= 0.0) throw NonPositiveEpsilon("epsilon must be > 0");

    SplitMix64 rng(spec.seed);
    Problem p;
    p.n = spec.n;
    p.N = spec.N;
    p.epsilon = spec.epsilon;

    p.a.resize(spec.n);
    double sum = 0.0;
    for (auto& v : p.a) { v = rng.uniform_pos(); sum += v; }
    for (auto& v : p.a) v /= sum;

    p.B = ColMat(spec.n, spec.N);
    for (std::size_t t = 0; t < spec.N; ++t) {
        double* col = p.B.col(t);
        double s = 0.0;
        for (std::size_t i = 0; i < spec.n; ++i) { col[i] = rng.uniform_pos(); s += col[i]; }
        for (std::size_t i = 0; i < spec.n; ++i) col[i] /= s;
    }

    p.C = Matrix(spec.n, spec.n);
    double cmax = 0.0;
    for (std::size_t i = 0; i < spec.n; ++i)
        for (std::size_t j = 0; j < spec.n; ++j) {
            double v = rng.uniform();
            p.C(i, j) = v;
            if (v > cmax) cmax = v;
        }

    if (spec.sparsity > 0.0) {
        const std::size_t m = spec.n / static_cast<std::size_t>(spec.c_hint);
        const double hi = 10.0 * cmax;
        for (std::size_t i = 0; i < spec.n; ++i)
            for (std::size_t j = 0; j < spec.n; ++j)
                if (i / m != j / m && rng.uniform() < spec.sparsity) p.C(i, j) = hi;
    }

    double span = 1.0;
    if (spec.cond_class == CondClass::medium) span = 1e3;
    if (spec.cond_class == CondClass::ill) span = 1e6;
    if (span > 1.0) {
        for (std::size_t i = 0; i < spec.n; ++i) {
            double e = spec.n > 1 ? static_cast<double>(i) / static_cast<double>(spec.n - 1)
                                  : 1.0;
            double scale = std::pow(span, e) / span;
            double* row = p.C.row(i);
            for (std::size_t j = 0; j < spec.n; ++j) row[j] *= scale;
        }
    }
    return p;
}

// --- self-describing binary container -------------------------------------
// "FSKI" | u32 LE header length | header JSON | a (n f64 LE) |
// B (n*N f64 LE, column-major) | C (n*n f64 LE, row-major)

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f64s(std::ostream& os, const double* p, std::size_t count) {
    // little-endian hosts only; arrays are written raw
    static_assert(sizeof(double) == 8);
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * 8));
}
inline void get_f64s(std::istream& is, double* p, std::size_t count) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(count * 8));
}
} // namespace detail

inline void write_instance(std::ostream& os, const Problem& p, const GenSpec* spec = nullptr) {
    nlohmann::json header = {
        {"format", "fsk-instance"},
        {"version", 1},
        {"n", p.n},
        {"N", p.N},
        {"epsilon", p.epsilon},
        {"prng", "splitmix64"},
        {"layout", {{"endian", "little"}, {"B", "column-major"}, {"C", "row-major"}}},
    };
    if (spec) {
        header["sparsity"] = spec->sparsity;
        header["cond_class"] = to_string(spec->cond_class);
        header["c_hint"] = spec->c_hint;
        header["seed"] = spec->seed;
    }
    std::string hs = header.dump();
    os.write("FSKI", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    detail::put_f64s(os, p.a.data(), p.n);
    detail::put_f64s(os, p.B.data().data(), p.n * p.N);
    detail::put_f64s(os, p.C.data().data(), p.n * p.n);
}

inline Problem read_instance(std::istream& is, nlohmann::json* header_out = nullptr) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FSKI", 4) != 0)
        throw FrameError("not an fsk-instance container");
    std::uint32_t hlen = detail::get_u32(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.value("version", 0) != 1) throw FrameError("unsupported container version");
    Problem p;
    p.n = header.at("n").get<std::size_t>();
    p.N = header.at("N").get<std::size_t>();
    p.epsilon = header.at("epsilon").get<double>();
    p.a.resize(p.n);
    detail::get_f64s(is, p.a.data(), p.n);
    p.B = ColMat(p.n, p.N);
    detail::get_f64s(is, p.B.data().data(), p.n * p.N);
    p.C = Matrix(p.n, p.n);
    detail::get_f64s(is, p.C.data().data(), p.n * p.n);
    if (!is) throw FrameError("truncated instance container");
    if (header_out) *header_out = header;
    return p;
}

inline void write_instance_file(const std::string& path, const Problem& p,
                                const GenSpec* spec = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    write_instance(os, p, spec);
}

inline Problem read_instance_file(const std::string& path, nlohmann::json* header = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path);
    return read_instance(is, header);
}

/// FNV-1a over the raw bytes of a, B, C; the determinism golden tests pin
/// this value per (spec, platform-independent PRNG).
inline std::uint64_t instance_hash(const Problem& p) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto eat = [&h](const double* d, std::size_t count) {
        const unsigned char* b = reinterpret_cast<const unsigned char*>(d);
        for (std::size_t i = 0; i < count * 8; ++i) {
            h ^= b[i];
            h *= 0x100000001B3ULL;
        }
    };
    eat(p.a.data(), p.n);
    eat(p.B.data().data(), p.n * p.N);
    eat(p.C.data().data(), p.n * p.n);
    return h;
}

} // namespace fsk
