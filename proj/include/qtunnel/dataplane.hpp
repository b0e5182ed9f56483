#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>

#include "qtunnel/bytes.hpp"

namespace qtunnel::dataplane {

inline constexpr std::size_t kHeaderSize = 12;  // spi(4) | seq(8)
inline constexpr std::size_t kTagSize = 16;
inline constexpr std::size_t kPacketOverhead = kHeaderSize + kTagSize;
inline constexpr std::size_t kMaxPlaintext = 8192;
inline constexpr std::uint64_t kReplayWindowWidth = 64;

// Anti-replay sliding window over 64-bit sequence numbers. Accepts seq in
// (highest - 64, highest] that has not been seen, or anything above highest.
class ReplayWindow {
public:
    bool check(std::uint64_t seq) const;
    // Returns false (and leaves the window unchanged) on replay or stale seq.
    bool check_and_update(std::uint64_t seq);

    std::uint64_t highest() const { return highest_; }

private:
    std::uint64_t highest_ = 0;
    std::uint64_t bitmap_ = 0;  // bit i marks seq (highest_ - i)
};

enum class Direction { outbound, inbound };

enum class DataplaneErrorCode { sa_expired, seq_exhausted, wrong_direction, payload_too_large, spi_collision };

class DataplaneError : public std::runtime_error {
public:
    DataplaneError(DataplaneErrorCode code, const char* what) : std::runtime_error(what), code_(code) {}
    DataplaneErrorCode code() const { return code_; }

private:
    DataplaneErrorCode code_;
};

// One direction of a Child SA. Held by shared_ptr so a sealing or opening
// thread keeps it alive across table updates.
class DataSa {
public:
    DataSa(std::uint32_t spi, Direction direction, ByteView key, ByteView salt,
           std::optional<double> expires_at = std::nullopt);

    std::uint32_t spi() const { return spi_; }
    Direction direction() const { return direction_; }
    const FixedBytes<32>& key() const { return key_; }
    const FixedBytes<4>& salt() const { return salt_; }
    std::optional<double> expires_at() const { return expires_at_; }

    std::uint64_t send_seq() const { return send_seq_.load(); }
    // Test hook for the sequence-exhaustion path.
    void set_send_seq(std::uint64_t seq) { send_seq_.store(seq); }

    // Reserves the next sequence number; throws SeqExhausted at 2^64 - 1.
    std::uint64_t next_seq();

    bool replay_check_and_update(std::uint64_t seq);

private:
    std::uint32_t spi_;
    Direction direction_;
    FixedBytes<32> key_{};
    FixedBytes<4> salt_{};
    std::optional<double> expires_at_;
    std::atomic<std::uint64_t> send_seq_{0};
    std::mutex window_mutex_;
    ReplayWindow window_;
};

using DataSaPtr = std::shared_ptr<DataSa>;

// Wire layout: spi(4, BE) | seq(8, BE) | ciphertext | tag(16). AAD = spi | seq,
// nonce = salt | seq.
struct TunnelPacket {
    std::uint32_t spi = 0;
    std::uint64_t seq = 0;
    Bytes ciphertext_and_tag;

    Bytes encode() const;
    // nullopt if shorter than the fixed overhead.
    static std::optional<TunnelPacket> decode(ByteView wire);
};

FixedBytes<12> make_nonce(const FixedBytes<4>& salt, std::uint64_t seq);
FixedBytes<12> make_aad(std::uint32_t spi, std::uint64_t seq);

TunnelPacket seal(DataSa& sa, ByteView plaintext, double now);

// Seals straight into a wire buffer; returns the packet length.
std::size_t seal_into(DataSa& sa, ByteView plaintext, double now, Bytes& wire);

enum class OpenStatus { ok, unknown_spi, auth_fail, replay_drop, malformed };

const char* to_string(OpenStatus s);

struct OpenResult {
    OpenStatus status = OpenStatus::malformed;
    std::uint32_t spi = 0;
    std::uint64_t seq = 0;
    Bytes plaintext;
};

struct TableCounters {
    std::uint64_t accepted = 0;
    std::uint64_t unknown_spi = 0;
    std::uint64_t auth_fail = 0;
    std::uint64_t replay_drop = 0;
    std::uint64_t malformed = 0;

    std::uint64_t total() const { return accepted + unknown_spi + auth_fail + replay_drop + malformed; }
};

// SPI-indexed inbound SAs plus the current outbound SA. Readers copy a
// snapshot pointer under a short lock, so a packet sees either the old or the
// new SA set.
class SaTable {
public:
    SaTable();

    // Atomically adds an inbound SA and (optionally) switches outbound.
    // Throws SpiCollision without modifying the table.
    void install(DataSaPtr inbound, DataSaPtr outbound = nullptr);
    void install_inbound(DataSaPtr inbound) { install(std::move(inbound), nullptr); }
    void set_outbound(DataSaPtr outbound);

    // Keeps the inbound SA readable until now + grace, then drops it.
    // Returns false if the SPI is unknown.
    bool retire(std::uint32_t spi, double grace, double now);

    // Drops an inbound SA immediately. Returns false if the SPI is unknown.
    bool remove(std::uint32_t spi);

    // Removes retired SAs whose grace has elapsed.
    void purge(double now);

    DataSaPtr outbound() const;
    // nullptr if unknown or past its retirement deadline.
    DataSaPtr find_inbound(std::uint32_t spi, double now) const;
    std::size_t inbound_count() const;

    OpenResult open(ByteView wire, double now);

    TableCounters counters() const;

private:
    struct InboundEntry {
        DataSaPtr sa;
        std::optional<double> retire_at;
    };
    struct Snapshot {
        std::map<std::uint32_t, InboundEntry> inbound;
        DataSaPtr outbound;
    };

    std::shared_ptr<const Snapshot> snapshot() const;

    mutable std::mutex mutex_;
    std::shared_ptr<const Snapshot> current_;

    std::atomic<std::uint64_t> accepted_{0};
    std::atomic<std::uint64_t> unknown_spi_{0};
    std::atomic<std::uint64_t> auth_fail_{0};
    std::atomic<std::uint64_t> replay_drop_{0};
    std::atomic<std::uint64_t> malformed_{0};
};

}  // namespace qtunnel::dataplane
