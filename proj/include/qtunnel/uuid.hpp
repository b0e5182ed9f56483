#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "qtunnel/bytes.hpp"

namespace qtunnel {

// 128-bit identifier rendered as lowercase 8-4-4-4-12 hex.
struct Uuid {
    FixedBytes<16> bytes{};

    // Version 4 layout filled from the given generator.
    template <typename Rng>
    static Uuid random_v4(Rng& rng) {
        Uuid id;
        for (std::size_t i = 0; i < 16; i += 8) {
            std::uint64_t word = rng();
            for (std::size_t j = 0; j < 8; ++j) {
                id.bytes[i + j] = static_cast<std::uint8_t>(word >> (8 * j));
            }
        }
        id.bytes[6] = static_cast<std::uint8_t>((id.bytes[6] & 0x0f) | 0x40);
        id.bytes[8] = static_cast<std::uint8_t>((id.bytes[8] & 0x3f) | 0x80);
        return id;
    }

    static std::optional<Uuid> parse(std::string_view text);
    static Uuid from_bytes(ByteView raw);

    std::string to_string() const;

    auto operator<=>(const Uuid&) const = default;
};

}  // namespace qtunnel

template <>
struct std::hash<qtunnel::Uuid> {
    std::size_t operator()(const qtunnel::Uuid& id) const noexcept {
        std::size_t h = 0;
        for (auto b : id.bytes) h = h * 131 + b;
        return h;
    }
};
