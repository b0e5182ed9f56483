#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qtunnel {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

template <std::size_t N>
using FixedBytes = std::array<std::uint8_t, N>;

inline ByteView as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline void append(Bytes& out, ByteView part) {
    out.insert(out.end(), part.begin(), part.end());
}

template <typename... Parts>
Bytes concat(const Parts&... parts) {
    Bytes out;
    out.reserve((std::size(parts) + ... + 0));
    (append(out, ByteView(parts)), ...);
    return out;
}

inline void put_be32(std::uint8_t* p, std::uint32_t v) {
    p[0] = static_cast<std::uint8_t>(v >> 24);
    p[1] = static_cast<std::uint8_t>(v >> 16);
    p[2] = static_cast<std::uint8_t>(v >> 8);
    p[3] = static_cast<std::uint8_t>(v);
}

inline void put_be64(std::uint8_t* p, std::uint64_t v) {
    put_be32(p, static_cast<std::uint32_t>(v >> 32));
    put_be32(p + 4, static_cast<std::uint32_t>(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
           (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

inline std::uint64_t get_be64(const std::uint8_t* p) {
    return (std::uint64_t{get_be32(p)} << 32) | get_be32(p + 4);
}

std::string to_hex(ByteView data);

// Throws std::invalid_argument on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

// Standard alphabet with '=' padding.
std::string base64_encode(ByteView data);

// Strict decode: rejects missing padding, whitespace and non-alphabet input.
Bytes base64_decode(std::string_view text);

}  // namespace qtunnel
