#pragma once

#include <memory>

#include "qtunnel/ike.hpp"
#include "qtunnel/kms.hpp"
#include "qtunnel/qkd_link.hpp"

namespace fixtures {

using namespace qtunnel;

inline std::pair<kms::KmeConfig, kms::KmeConfig> kme_pair(std::size_t max_keys = 100000) {
    kms::KmeConfig a;
    a.kme_id = "kme-a";
    a.peer_kme_id = "kme-b";
    a.registered_sae_ids = {"fw-a"};
    a.sae_tokens = {{"fw-a", "token-a"}};
    a.max_key_count = max_keys;
    kms::KmeConfig b = a;
    b.kme_id = "kme-b";
    b.peer_kme_id = "kme-a";
    b.registered_sae_ids = {"fw-b"};
    b.sae_tokens = {{"fw-b", "token-b"}};
    return {a, b};
}

inline std::unique_ptr<kms::KeyPlane> make_plane(std::size_t max_keys = 100000) {
    auto [a, b] = kme_pair(max_keys);
    return std::make_unique<kms::KeyPlane>(a, b);
}

inline qkd::LinkParams constant_link(std::uint64_t seed = 1) {
    qkd::LinkParams p;
    p.skr_jitter_rel = 0.0;
    p.seed = seed;
    return p;
}

// Feeds `seconds` of constant-rate link output into the plane.
inline void fill(kms::KeyPlane& plane, qkd::QkdLink& link, int seconds) {
    for (int i = 0; i < seconds; ++i) plane.ingest(link.advance(1.0).batch);
}

inline std::pair<ike::IkeConfig, ike::IkeConfig> ike_pair(int tunnel = 0) {
    Bytes psk(32, 0x5a);
    return {ike::IkeConfig{"fw-a." + std::to_string(tunnel), psk, crypto::DhGroup::curve25519},
            ike::IkeConfig{"fw-b." + std::to_string(tunnel), psk, crypto::DhGroup::curve25519}};
}

}  // namespace fixtures
