#include "qtunnel/kms.hpp"

#include <algorithm>

namespace qtunnel::kms {

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::bad_request:
        case ErrorCode::bad_size:
        case ErrorCode::unknown_key_id:
        case ErrorCode::already_consumed: return 400;
        case ErrorCode::unknown_sae: return 401;
        case ErrorCode::insufficient_keys:
        case ErrorCode::unavailable: return 503;
    }
    return 500;
}

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::bad_request: return "bad_request";
        case ErrorCode::bad_size: return "bad_size";
        case ErrorCode::unknown_sae: return "unknown_sae";
        case ErrorCode::insufficient_keys: return "insufficient_keys";
        case ErrorCode::unknown_key_id: return "unknown_key_id";
        case ErrorCode::already_consumed: return "already_consumed";
        case ErrorCode::unavailable: return "unavailable";
    }
    return "unknown";
}

void KmeConfig::validate() const {
    if (kme_id.empty()) throw std::invalid_argument("kme_id must not be empty");
    if (kme_id == peer_kme_id) throw std::invalid_argument("kme_id must differ from peer_kme_id");
    if (registered_sae_ids.empty()) throw std::invalid_argument("registered_sae_ids must not be empty");
    if (key_size_bits != kKeySizeBits) throw std::invalid_argument("key_size_bits must be 256");
    if (max_key_count == 0) throw std::invalid_argument("max_key_count must be > 0");
    if (max_keys_per_request == 0) throw std::invalid_argument("max_keys_per_request must be > 0");
    for (const auto& [sae, token] : sae_tokens) {
        if (!registered_sae_ids.contains(sae)) {
            throw std::invalid_argument("token configured for unregistered SAE " + sae);
        }
    }
}

void to_json(nlohmann::json& j, const StatusDoc& s) {
    j = nlohmann::json{{"source_KME_ID", s.source_KME_ID},
                       {"target_KME_ID", s.target_KME_ID},
                       {"master_SAE_ID", s.master_SAE_ID},
                       {"slave_SAE_ID", s.slave_SAE_ID},
                       {"key_size", s.key_size},
                       {"stored_key_count", s.stored_key_count},
                       {"max_key_count", s.max_key_count},
                       {"max_key_per_request", s.max_key_per_request},
                       {"max_key_size", s.max_key_size},
                       {"min_key_size", s.min_key_size}};
}

void from_json(const nlohmann::json& j, StatusDoc& s) {
    j.at("source_KME_ID").get_to(s.source_KME_ID);
    j.at("target_KME_ID").get_to(s.target_KME_ID);
    j.at("master_SAE_ID").get_to(s.master_SAE_ID);
    j.at("slave_SAE_ID").get_to(s.slave_SAE_ID);
    j.at("key_size").get_to(s.key_size);
    j.at("stored_key_count").get_to(s.stored_key_count);
    j.at("max_key_count").get_to(s.max_key_count);
    j.at("max_key_per_request").get_to(s.max_key_per_request);
    j.at("max_key_size").get_to(s.max_key_size);
    j.at("min_key_size").get_to(s.min_key_size);
}

void to_json(nlohmann::json& j, const KeyContainer& c) {
    j = nlohmann::json{{"keys", nlohmann::json::array()}};
    for (const auto& k : c.keys) {
        j["keys"].push_back({{"key_ID", k.key_ID}, {"key", k.key}});
    }
}

void from_json(const nlohmann::json& j, KeyContainer& c) {
    c.keys.clear();
    std::unordered_set<std::string> seen;
    for (const auto& item : j.at("keys")) {
        KeyEntry e{item.at("key_ID").get<std::string>(), item.at("key").get<std::string>()};
        if (!Uuid::parse(e.key_ID)) throw std::invalid_argument("malformed key_ID " + e.key_ID);
        if (!seen.insert(e.key_ID).second) throw std::invalid_argument("duplicate key_ID " + e.key_ID);
        if (base64_decode(e.key).size() != qkd::kKeyBlockBytes) {
            throw std::invalid_argument("key material for " + e.key_ID + " is not 32 bytes");
        }
        c.keys.push_back(std::move(e));
    }
}

std::vector<DeliveredKey> decode_keys(const KeyContainer& c) {
    std::vector<DeliveredKey> out;
    out.reserve(c.keys.size());
    for (const auto& e : c.keys) {
        auto id = Uuid::parse(e.key_ID);
        Bytes raw = base64_decode(e.key);
        if (!id || raw.size() != qkd::kKeyBlockBytes) {
            throw std::invalid_argument("malformed key entry " + e.key_ID);
        }
        DeliveredKey k;
        k.key_id = *id;
        std::copy(raw.begin(), raw.end(), k.material.begin());
        out.push_back(k);
    }
    return out;
}

namespace {

KeyEntry to_entry(const qkd::KeyBlock& block) {
    return {block.key_id.to_string(), base64_encode(block.material)};
}

}  // namespace

KeyPlane::KeyPlane(KmeConfig side_a, KmeConfig side_b)
    : configs_{std::move(side_a), std::move(side_b)} {
    for (const auto& c : configs_) c.validate();
    if (configs_[0].peer_kme_id != configs_[1].kme_id || configs_[1].peer_kme_id != configs_[0].kme_id) {
        throw std::invalid_argument("KME configs do not name each other as peers");
    }
}

std::size_t KeyPlane::ingest(std::span<const qkd::KeyBlock> batch) {
    std::lock_guard lock(mutex_);
    std::size_t capacity = std::min(configs_[0].max_key_count, configs_[1].max_key_count);
    std::size_t accepted = 0;
    for (const auto& block : batch) {
        // mirrors hold identical sets, so one size check covers both
        bool room = stores_[0].available.size() < capacity;
        for (auto& store : stores_) {
            ++store.ingested;
            if (room) {
                store.available.push_back(block);
                ++store.accepted;
            } else {
                ++store.dropped;
            }
        }
        if (room) ++accepted;
    }
    return accepted;
}

void KeyPlane::require_local(Side side, const std::string& sae) const {
    if (!config(side).registered_sae_ids.contains(sae)) {
        throw KmsError(ErrorCode::unknown_sae, "SAE " + sae + " is not registered at " + config(side).kme_id);
    }
}

void KeyPlane::require_remote(Side side, const std::string& sae) const {
    if (!config(peer_of(side)).registered_sae_ids.contains(sae)) {
        throw KmsError(ErrorCode::unknown_sae,
                       "SAE " + sae + " is not registered at peer " + config(side).peer_kme_id);
    }
}

StatusDoc KeyPlane::get_status(Side side, const std::string& master_sae,
                               const std::string& slave_sae) const {
    require_local(side, master_sae);
    require_remote(side, slave_sae);
    const auto& cfg = config(side);
    StatusDoc doc;
    doc.source_KME_ID = cfg.kme_id;
    doc.target_KME_ID = cfg.peer_kme_id;
    doc.master_SAE_ID = master_sae;
    doc.slave_SAE_ID = slave_sae;
    doc.key_size = cfg.key_size_bits;
    doc.max_key_count = cfg.max_key_count;
    doc.max_key_per_request = cfg.max_keys_per_request;
    std::lock_guard lock(mutex_);
    doc.stored_key_count = stores_[index(side)].available.size();
    return doc;
}

KeyContainer KeyPlane::get_enc_keys(Side side, const std::string& master_sae,
                                    const std::string& slave_sae, std::int64_t number,
                                    std::int64_t size) {
    require_local(side, master_sae);
    require_remote(side, slave_sae);
    const auto& cfg = config(side);
    if (size != cfg.key_size_bits) {
        throw KmsError(ErrorCode::bad_size, "size must be " + std::to_string(cfg.key_size_bits));
    }
    if (number < 1 || static_cast<std::uint64_t>(number) > cfg.max_keys_per_request) {
        throw KmsError(ErrorCode::bad_request,
                       "number must be in [1, " + std::to_string(cfg.max_keys_per_request) + "]");
    }

    std::lock_guard lock(mutex_);
    auto& local = stores_[index(side)];
    auto& peer = stores_[index(peer_of(side))];
    auto n = static_cast<std::size_t>(number);
    if (local.available.size() < n) {
        throw KmsError(ErrorCode::insufficient_keys,
                       "requested " + std::to_string(n) + " keys, " +
                           std::to_string(local.available.size()) + " stored");
    }
    KeyContainer out;
    for (std::size_t i = 0; i < n; ++i) {
        qkd::KeyBlock block = local.available.front();
        local.available.pop_front();
        peer.available.pop_front();
        KeyStoreState::Reservation r{block, master_sae, slave_sae};
        local.reserved.emplace(block.key_id, r);
        peer.reserved.emplace(block.key_id, r);
        ++local.reserved_total;
        ++peer.reserved_total;
        out.keys.push_back(to_entry(block));
    }
    return out;
}

KeyContainer KeyPlane::get_dec_keys(Side side, const std::string& slave_sae,
                                    const std::string& master_sae,
                                    std::span<const std::string> key_ids) {
    require_local(side, slave_sae);
    require_remote(side, master_sae);
    if (key_ids.empty()) throw KmsError(ErrorCode::bad_request, "key_IDs must not be empty");

    std::lock_guard lock(mutex_);
    auto& local = stores_[index(side)];
    auto& peer = stores_[index(peer_of(side))];

    // validate the whole request before consuming anything
    std::vector<Uuid> ids;
    std::unordered_set<Uuid> seen;
    for (const auto& text : key_ids) {
        auto id = Uuid::parse(text);
        if (!id) throw KmsError(ErrorCode::unknown_key_id, "malformed key_ID " + text);
        if (!seen.insert(*id).second) throw KmsError(ErrorCode::bad_request, "duplicate key_ID " + text);
        if (local.consumed.contains(*id)) {
            throw KmsError(ErrorCode::already_consumed, "key_ID " + text + " already consumed");
        }
        auto it = local.reserved.find(*id);
        if (it == local.reserved.end() || it->second.slave_sae != slave_sae ||
            it->second.master_sae != master_sae) {
            throw KmsError(ErrorCode::unknown_key_id, "key_ID " + text + " not delivered to " + slave_sae);
        }
        ids.push_back(*id);
    }

    KeyContainer out;
    for (const auto& id : ids) {
        out.keys.push_back(to_entry(local.reserved.at(id).block));
        for (auto* store : {&local, &peer}) {
            store->reserved.erase(id);
            store->consumed.insert(id);
            ++store->consumed_total;
        }
    }
    return out;
}

KeyStoreCounters KeyPlane::counters(Side side) const {
    std::lock_guard lock(mutex_);
    const auto& s = stores_[index(side)];
    return {s.available.size(), s.ingested, s.accepted, s.dropped, s.reserved_total, s.consumed_total};
}

std::vector<Uuid> KeyPlane::available_ids(Side side) const {
    std::lock_guard lock(mutex_);
    std::vector<Uuid> out;
    for (const auto& b : stores_[index(side)].available) out.push_back(b.key_id);
    return out;
}

std::string KeyPlane::authenticate(Side side, const std::string& token) const {
    if (token.empty()) return {};
    for (const auto& [sae, expected] : config(side).sae_tokens) {
        if (expected == token) return sae;
    }
    return {};
}

void LocalKmsClient::check_up() const {
    if (!available_) throw KmsError(ErrorCode::unavailable, "KME unreachable");
}

StatusDoc LocalKmsClient::get_status(const std::string& slave_sae) {
    check_up();
    return plane_.get_status(side_, sae_id_, slave_sae);
}

KeyContainer LocalKmsClient::get_enc_keys(const std::string& slave_sae, int number, int size) {
    check_up();
    return plane_.get_enc_keys(side_, sae_id_, slave_sae, number, size);
}

KeyContainer LocalKmsClient::get_dec_keys(const std::string& master_sae,
                                          std::span<const std::string> key_ids) {
    check_up();
    return plane_.get_dec_keys(side_, sae_id_, master_sae, key_ids);
}

}  // namespace qtunnel::kms
