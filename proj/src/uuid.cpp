#include "qtunnel/uuid.hpp"

#include <stdexcept>

namespace qtunnel {

std::optional<Uuid> Uuid::parse(std::string_view text) {
    if (text.size() != 36) return std::nullopt;
    std::string compact;
    compact.reserve(32);
    for (std::size_t i = 0; i < text.size(); ++i) {
        bool dash_pos = i == 8 || i == 13 || i == 18 || i == 23;
        if (dash_pos != (text[i] == '-')) return std::nullopt;
        if (!dash_pos) compact.push_back(text[i]);
    }
    Bytes raw;
    try {
        raw = from_hex(compact);
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
    return from_bytes(raw);
}

Uuid Uuid::from_bytes(ByteView raw) {
    if (raw.size() != 16) throw std::invalid_argument("uuid must be 16 bytes");
    Uuid id;
    std::copy(raw.begin(), raw.end(), id.bytes.begin());
    return id;
}

std::string Uuid::to_string() const {
    std::string hex = to_hex(bytes);
    return hex.substr(0, 8) + '-' + hex.substr(8, 4) + '-' + hex.substr(12, 4) + '-' +
           hex.substr(16, 4) + '-' + hex.substr(20);
}

}  // namespace qtunnel
