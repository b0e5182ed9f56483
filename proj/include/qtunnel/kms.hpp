#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtunnel/qkd_link.hpp"
#include "qtunnel/uuid.hpp"

namespace qtunnel::kms {

inline constexpr int kKeySizeBits = 256;

enum class ErrorCode {
    bad_request,
    bad_size,
    unknown_sae,
    insufficient_keys,
    unknown_key_id,
    already_consumed,
    unavailable,  // transport failure, never produced by a KME itself
};

// HTTP status class for the ETSI-QKD-014 error mapping.
int http_status(ErrorCode code);
const char* to_string(ErrorCode code);

class KmsError : public std::runtime_error {
public:
    KmsError(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

struct KmeConfig {
    std::string kme_id;
    std::string peer_kme_id;
    // SAEs attached to this KME.
    std::set<std::string> registered_sae_ids;
    std::size_t max_key_count = 100000;
    std::size_t max_keys_per_request = 128;
    int key_size_bits = kKeySizeBits;
    std::string listen_host = "127.0.0.1";
    std::uint16_t listen_port = 0;
    // Static bearer token per local SAE.
    std::map<std::string, std::string> sae_tokens;

    void validate() const;
};

struct StatusDoc {
    std::string source_KME_ID;
    std::string target_KME_ID;
    std::string master_SAE_ID;
    std::string slave_SAE_ID;
    int key_size = kKeySizeBits;
    std::size_t stored_key_count = 0;
    std::size_t max_key_count = 0;
    std::size_t max_key_per_request = 0;
    int max_key_size = kKeySizeBits;
    int min_key_size = kKeySizeBits;

    bool operator==(const StatusDoc&) const = default;
};

struct KeyEntry {
    std::string key_ID;
    std::string key;  // base64

    bool operator==(const KeyEntry&) const = default;
};

struct KeyContainer {
    std::vector<KeyEntry> keys;

    bool operator==(const KeyContainer&) const = default;
};

void to_json(nlohmann::json& j, const StatusDoc& s);
void from_json(const nlohmann::json& j, StatusDoc& s);
void to_json(nlohmann::json& j, const KeyContainer& c);
// Validates key_ID syntax, uniqueness and 32-byte key length.
void from_json(const nlohmann::json& j, KeyContainer& c);

// A delivered key, decoded.
struct DeliveredKey {
    Uuid key_id;
    FixedBytes<qkd::kKeyBlockBytes> material{};
};
std::vector<DeliveredKey> decode_keys(const KeyContainer& c);

enum class Side { a = 0, b = 1 };

inline Side peer_of(Side s) { return s == Side::a ? Side::b : Side::a; }

// One KME's view of the shared key stream.
struct KeyStoreState {
    std::deque<qkd::KeyBlock> available;
    struct Reservation {
        qkd::KeyBlock block;
        std::string master_sae;
        std::string slave_sae;
    };
    std::unordered_map<Uuid, Reservation> reserved;
    std::unordered_set<Uuid> consumed;

    std::uint64_t ingested = 0;
    std::uint64_t accepted = 0;
    std::uint64_t dropped = 0;
    std::uint64_t reserved_total = 0;
    std::uint64_t consumed_total = 0;
};

struct KeyStoreCounters {
    std::size_t stored_key_count = 0;
    std::uint64_t ingested = 0;
    std::uint64_t accepted = 0;
    std::uint64_t dropped = 0;
    std::uint64_t reserved = 0;
    std::uint64_t consumed = 0;
};

// The two mirrored KMEs of one QKD link. Both stores are fed from the same
// link stream and every mutation is applied to both under one lock, so the
// mirrors never diverge and reserve/consume are linearizable.
class KeyPlane {
public:
    KeyPlane(KmeConfig side_a, KmeConfig side_b);

    const KmeConfig& config(Side side) const { return configs_[index(side)]; }

    // Appends blocks in order while both stores have room; the rest is
    // dropped on both. Returns the number accepted.
    std::size_t ingest(std::span<const qkd::KeyBlock> batch);

    StatusDoc get_status(Side side, const std::string& master_sae, const std::string& slave_sae) const;

    // Caller is the master SAE attached to `side`.
    KeyContainer get_enc_keys(Side side, const std::string& master_sae, const std::string& slave_sae,
                              std::int64_t number, std::int64_t size);

    // Caller is the slave SAE attached to `side`.
    KeyContainer get_dec_keys(Side side, const std::string& slave_sae, const std::string& master_sae,
                              std::span<const std::string> key_ids);

    KeyStoreCounters counters(Side side) const;

    // Ordered key_IDs still available on a side (mirror checks).
    std::vector<Uuid> available_ids(Side side) const;

    // Resolves a bearer token to a local SAE id, empty if unknown.
    std::string authenticate(Side side, const std::string& token) const;

private:
    static std::size_t index(Side s) { return static_cast<std::size_t>(s); }
    void require_local(Side side, const std::string& sae) const;
    void require_remote(Side side, const std::string& sae) const;

    std::array<KmeConfig, 2> configs_;
    mutable std::mutex mutex_;
    std::array<KeyStoreState, 2> stores_;
};

// Key-delivery client bound to one SAE identity.
class KmsClient {
public:
    virtual ~KmsClient() = default;
    virtual const std::string& sae_id() const = 0;
    virtual StatusDoc get_status(const std::string& slave_sae) = 0;
    virtual KeyContainer get_enc_keys(const std::string& slave_sae, int number, int size) = 0;
    virtual KeyContainer get_dec_keys(const std::string& master_sae,
                                      std::span<const std::string> key_ids) = 0;
};

// Direct in-process access to one side of a KeyPlane.
class LocalKmsClient : public KmsClient {
public:
    LocalKmsClient(KeyPlane& plane, Side side, std::string sae_id)
        : plane_(plane), side_(side), sae_id_(std::move(sae_id)) {}

    const std::string& sae_id() const override { return sae_id_; }
    StatusDoc get_status(const std::string& slave_sae) override;
    KeyContainer get_enc_keys(const std::string& slave_sae, int number, int size) override;
    KeyContainer get_dec_keys(const std::string& master_sae,
                              std::span<const std::string> key_ids) override;

    // Simulates an unreachable KME.
    void set_available(bool up) { available_ = up; }

private:
    void check_up() const;

    KeyPlane& plane_;
    Side side_;
    std::string sae_id_;
    bool available_ = true;
};

}  // namespace qtunnel::kms
