#include "qtunnel/dataplane.hpp"

#include <algorithm>
#include <limits>

#include "qtunnel/crypto.hpp"

namespace qtunnel::dataplane {

bool ReplayWindow::check(std::uint64_t seq) const {
    if (seq == 0) return false;
    if (seq > highest_) return true;
    std::uint64_t offset = highest_ - seq;
    if (offset >= kReplayWindowWidth) return false;
    return (bitmap_ & (std::uint64_t{1} << offset)) == 0;
}

bool ReplayWindow::check_and_update(std::uint64_t seq) {
    if (!check(seq)) return false;
    if (seq > highest_) {
        std::uint64_t shift = seq - highest_;
        bitmap_ = shift >= kReplayWindowWidth ? 0 : bitmap_ << shift;
        bitmap_ |= 1;
        highest_ = seq;
    } else {
        bitmap_ |= std::uint64_t{1} << (highest_ - seq);
    }
    return true;
}

DataSa::DataSa(std::uint32_t spi, Direction direction, ByteView key, ByteView salt,
               std::optional<double> expires_at)
    : spi_(spi), direction_(direction), expires_at_(expires_at) {
    if (key.size() != key_.size() || salt.size() != salt_.size()) {
        throw std::invalid_argument("DataSa needs a 32-byte key and 4-byte salt");
    }
    std::copy(key.begin(), key.end(), key_.begin());
    std::copy(salt.begin(), salt.end(), salt_.begin());
}

std::uint64_t DataSa::next_seq() {
    std::uint64_t cur = send_seq_.load();
    do {
        if (cur == std::numeric_limits<std::uint64_t>::max()) {
            throw DataplaneError(DataplaneErrorCode::seq_exhausted, "sequence number space exhausted");
        }
    } while (!send_seq_.compare_exchange_weak(cur, cur + 1));
    return cur + 1;
}

bool DataSa::replay_check_and_update(std::uint64_t seq) {
    std::lock_guard lock(window_mutex_);
    return window_.check_and_update(seq);
}

Bytes TunnelPacket::encode() const {
    Bytes out(kHeaderSize + ciphertext_and_tag.size());
    put_be32(out.data(), spi);
    put_be64(out.data() + 4, seq);
    std::copy(ciphertext_and_tag.begin(), ciphertext_and_tag.end(), out.begin() + kHeaderSize);
    return out;
}

std::optional<TunnelPacket> TunnelPacket::decode(ByteView wire) {
    if (wire.size() < kPacketOverhead) return std::nullopt;
    TunnelPacket p;
    p.spi = get_be32(wire.data());
    p.seq = get_be64(wire.data() + 4);
    p.ciphertext_and_tag.assign(wire.begin() + kHeaderSize, wire.end());
    return p;
}

FixedBytes<12> make_nonce(const FixedBytes<4>& salt, std::uint64_t seq) {
    FixedBytes<12> nonce{};
    std::copy(salt.begin(), salt.end(), nonce.begin());
    put_be64(nonce.data() + 4, seq);
    return nonce;
}

FixedBytes<12> make_aad(std::uint32_t spi, std::uint64_t seq) {
    FixedBytes<12> aad{};
    put_be32(aad.data(), spi);
    put_be64(aad.data() + 4, seq);
    return aad;
}

namespace {

std::uint64_t prepare_seal(DataSa& sa, ByteView plaintext, double now) {
    if (sa.direction() != Direction::outbound) {
        throw DataplaneError(DataplaneErrorCode::wrong_direction, "seal requires an outbound SA");
    }
    if (sa.expires_at() && now >= *sa.expires_at()) {
        throw DataplaneError(DataplaneErrorCode::sa_expired, "SA expired");
    }
    if (plaintext.size() > kMaxPlaintext) {
        throw DataplaneError(DataplaneErrorCode::payload_too_large, "payload exceeds 8192 bytes");
    }
    return sa.next_seq();
}

}  // namespace

TunnelPacket seal(DataSa& sa, ByteView plaintext, double now) {
    TunnelPacket p;
    p.spi = sa.spi();
    p.seq = prepare_seal(sa, plaintext, now);
    p.ciphertext_and_tag = crypto::aes256gcm_seal(sa.key(), make_nonce(sa.salt(), p.seq),
                                                  make_aad(p.spi, p.seq), plaintext);
    return p;
}

std::size_t seal_into(DataSa& sa, ByteView plaintext, double now, Bytes& wire) {
    std::uint64_t seq = prepare_seal(sa, plaintext, now);
    std::size_t len = kPacketOverhead + plaintext.size();
    wire.resize(len);
    auto aad = make_aad(sa.spi(), seq);
    std::copy(aad.begin(), aad.end(), wire.begin());
    crypto::aes256gcm_seal_into(sa.key(), make_nonce(sa.salt(), seq), aad, plaintext,
                                std::span<std::uint8_t>(wire.data() + kHeaderSize, len - kHeaderSize));
    return len;
}

const char* to_string(OpenStatus s) {
    switch (s) {
        case OpenStatus::ok: return "ok";
        case OpenStatus::unknown_spi: return "unknown_spi";
        case OpenStatus::auth_fail: return "auth_fail";
        case OpenStatus::replay_drop: return "replay_drop";
        case OpenStatus::malformed: return "malformed";
    }
    return "?";
}

SaTable::SaTable() : current_(std::make_shared<Snapshot>()) {}

std::shared_ptr<const SaTable::Snapshot> SaTable::snapshot() const {
    std::lock_guard lock(mutex_);
    return current_;
}

void SaTable::install(DataSaPtr inbound, DataSaPtr outbound) {
    std::lock_guard lock(mutex_);
    auto next = std::make_shared<Snapshot>(*current_);
    if (inbound) {
        if (inbound->direction() != Direction::inbound) {
            throw DataplaneError(DataplaneErrorCode::wrong_direction, "install expects an inbound SA");
        }
        if (next->inbound.contains(inbound->spi())) {
            throw DataplaneError(DataplaneErrorCode::spi_collision, "inbound SPI already installed");
        }
        const auto spi = inbound->spi();
        next->inbound.emplace(spi, InboundEntry{std::move(inbound), std::nullopt});
    }
    if (outbound) {
        if (outbound->direction() != Direction::outbound) {
            throw DataplaneError(DataplaneErrorCode::wrong_direction, "outbound slot expects an outbound SA");
        }
        next->outbound = std::move(outbound);
    }
    current_ = std::move(next);
}

void SaTable::set_outbound(DataSaPtr outbound) { install(nullptr, std::move(outbound)); }

bool SaTable::retire(std::uint32_t spi, double grace, double now) {
    std::lock_guard lock(mutex_);
    auto it = current_->inbound.find(spi);
    if (it == current_->inbound.end()) return false;
    auto next = std::make_shared<Snapshot>(*current_);
    double deadline = now + grace;
    auto& entry = next->inbound.at(spi);
    entry.retire_at = entry.retire_at ? std::min(*entry.retire_at, deadline) : deadline;
    current_ = std::move(next);
    return true;
}

bool SaTable::remove(std::uint32_t spi) {
    std::lock_guard lock(mutex_);
    if (!current_->inbound.contains(spi)) return false;
    auto next = std::make_shared<Snapshot>(*current_);
    next->inbound.erase(spi);
    current_ = std::move(next);
    return true;
}

void SaTable::purge(double now) {
    std::lock_guard lock(mutex_);
    bool stale = std::any_of(current_->inbound.begin(), current_->inbound.end(), [now](const auto& kv) {
        return kv.second.retire_at && now > *kv.second.retire_at;
    });
    if (!stale) return;
    auto next = std::make_shared<Snapshot>(*current_);
    std::erase_if(next->inbound, [now](const auto& kv) {
        return kv.second.retire_at && now > *kv.second.retire_at;
    });
    current_ = std::move(next);
}

DataSaPtr SaTable::outbound() const { return snapshot()->outbound; }

DataSaPtr SaTable::find_inbound(std::uint32_t spi, double now) const {
    auto snap = snapshot();
    auto it = snap->inbound.find(spi);
    if (it == snap->inbound.end()) return nullptr;
    if (it->second.retire_at && now > *it->second.retire_at) return nullptr;
    return it->second.sa;
}

std::size_t SaTable::inbound_count() const { return snapshot()->inbound.size(); }

OpenResult SaTable::open(ByteView wire, double now) {
    OpenResult r;
    if (wire.size() < kPacketOverhead) {
        ++malformed_;
        r.status = OpenStatus::malformed;
        return r;
    }
    r.spi = get_be32(wire.data());
    r.seq = get_be64(wire.data() + 4);
    DataSaPtr sa = find_inbound(r.spi, now);
    if (!sa) {
        ++unknown_spi_;
        r.status = OpenStatus::unknown_spi;
        return r;
    }
    auto plain = crypto::aes256gcm_open(sa->key(), make_nonce(sa->salt(), r.seq),
                                        ByteView(wire.data(), kHeaderSize), wire.subspan(kHeaderSize));
    if (!plain) {
        ++auth_fail_;
        r.status = OpenStatus::auth_fail;
        return r;
    }
    // window is only advanced by authenticated packets
    if (!sa->replay_check_and_update(r.seq)) {
        ++replay_drop_;
        r.status = OpenStatus::replay_drop;
        return r;
    }
    ++accepted_;
    r.status = OpenStatus::ok;
    r.plaintext = std::move(*plain);
    return r;
}

TableCounters SaTable::counters() const {
    return {accepted_.load(), unknown_spi_.load(), auth_fail_.load(), replay_drop_.load(), malformed_.load()};
}

}  // namespace qtunnel::dataplane
