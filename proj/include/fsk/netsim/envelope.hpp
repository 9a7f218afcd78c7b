#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "fsk/errors.hpp"

namespace fsk {

enum class Kind : std::uint8_t { U = 0, V = 1, Q = 2, R = 3 };

inline const char* to_string(Kind k) {
    switch (k) {
        case Kind::U: return "U";
        case Kind::V: return "V";
        case Kind::Q: return "Q";
        case Kind::R: return "R";
    }
    return "?";
}

// Control traffic (stop decisions over TCP) reuses the frame format with this
// sentinel block index; it never reaches user code through drain_mailbox.
inline constexpr std::uint32_t kControlBlock = 0xFFFFFFFFu;

// One tagged vector-slice message. `iteration` is the sender's completed
// iteration count when the envelope was posted and is monotone per
// (sender, kind) stream.
struct Envelope {
    std::uint16_t sender = 0;
    Kind kind = Kind::U;
    std::uint64_t iteration = 0;
    std::uint32_t block_index = 0;
    std::vector<double> payload;

    bool operator==(const Envelope& o) const {
        if (sender != o.sender || kind != o.kind || iteration != o.iteration ||
            block_index != o.block_index || payload.size() != o.payload.size())
            return false;
        // bitwise comparison so NaN payloads and signed zeros round-trip
        return payload.empty() ||
               std::memcmp(payload.data(), o.payload.data(), payload.size() * 8) == 0;
    }
};

// Wire frame, fixed little-endian layout:
//   "FSK1" | version u8 = 1 | kind u8 | sender u16 | block_index u32 |
//   iteration u64 | payload_len u32 (count of f64) | payload f64...
inline constexpr std::size_t kFrameHeaderSize = 4 + 1 + 1 + 2 + 4 + 8 + 4;

namespace wire {
inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
} // namespace wire

inline std::vector<std::uint8_t> tcp_frame_encode(const Envelope& e) {
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderSize + e.payload.size() * 8);
    out.insert(out.end(), {'F', 'S', 'K', '1'});
    out.push_back(1);  // version
    out.push_back(static_cast<std::uint8_t>(e.kind));
    wire::put_u16(out, e.sender);
    wire::put_u32(out, e.block_index);
    wire::put_u64(out, e.iteration);
    wire::put_u32(out, static_cast<std::uint32_t>(e.payload.size()));
    for (double d : e.payload) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        wire::put_u64(out, bits);
    }
    return out;
}

inline Envelope tcp_frame_decode(const std::uint8_t* data, std::size_t size) {
    if (size < kFrameHeaderSize) throw FrameError("frame shorter than header");
    if (std::memcmp(data, "FSK1", 4) != 0) throw FrameError("bad magic");
    if (data[4] != 1) throw FrameError("unsupported frame version " + std::to_string(data[4]));
    if (data[5] > 3) throw FrameError("bad kind byte " + std::to_string(data[5]));
    Envelope e;
    e.kind = static_cast<Kind>(data[5]);
    e.sender = wire::get_u16(data + 6);
    e.block_index = wire::get_u32(data + 8);
    e.iteration = wire::get_u64(data + 12);
    std::uint32_t len = wire::get_u32(data + 20);
    if (size != kFrameHeaderSize + static_cast<std::size_t>(len) * 8)
        throw FrameError("payload length mismatch");
    e.payload.resize(len);
    for (std::uint32_t i = 0; i < len; ++i) {
        std::uint64_t bits = wire::get_u64(data + kFrameHeaderSize + i * 8);
        std::memcpy(&e.payload[i], &bits, 8);
    }
    return e;
}

inline Envelope tcp_frame_decode(const std::vector<std::uint8_t>& bytes) {
    return tcp_frame_decode(bytes.data(), bytes.size());
}

} // namespace fsk
