#include "qtunnel/ike.hpp"

#include <algorithm>

namespace qtunnel::ike {

const char* to_string(IkeErrorCode code) {
    switch (code) {
        case IkeErrorCode::auth_failure: return "auth_failure";
        case IkeErrorCode::dh_failure: return "dh_failure";
        case IkeErrorCode::protocol: return "protocol";
        case IkeErrorCode::kms_unavailable: return "kms_unavailable";
        case IkeErrorCode::insufficient_keys: return "insufficient_keys";
        case IkeErrorCode::kms_rejected: return "kms_rejected";
    }
    return "?";
}

namespace {

constexpr std::string_view kKeyPad = "Key Pad for IKEv2";
constexpr std::size_t kEnvelopeHeader = 2 * kIkeSpiSize + 4;
constexpr std::size_t kMacSize = 32;

// Bounds-checked cursor over a message body.
class Reader {
public:
    explicit Reader(ByteView data) : data_(data) {}

    ByteView take(std::size_t n) {
        if (remaining() < n) throw ProtocolError("truncated message body");
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    template <std::size_t N>
    FixedBytes<N> take_array() {
        FixedBytes<N> out;
        auto v = take(N);
        std::copy(v.begin(), v.end(), out.begin());
        return out;
    }
    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() {
        auto v = take(2);
        return static_cast<std::uint16_t>((v[0] << 8) | v[1]);
    }
    std::uint32_t u32() { return get_be32(take(4).data()); }
    ByteView rest() { return take(remaining()); }
    std::size_t remaining() const { return data_.size() - pos_; }
    void expect_end() const {
        if (remaining() != 0) throw ProtocolError("trailing bytes in message body");
    }

private:
    ByteView data_;
    std::size_t pos_ = 0;
};

void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(Bytes& out, std::uint32_t v) {
    std::uint8_t b[4];
    put_be32(b, v);
    out.insert(out.end(), b, b + 4);
}

kdf::PrfOutput auth_value(ByteView psk, ByteView signed_octets) {
    if (psk.empty()) throw IkeError(IkeErrorCode::auth_failure, "pre-shared key must not be empty");
    return kdf::prf(kdf::prf(psk, as_bytes(kKeyPad)), signed_octets);
}

// RealMessage | peer nonce | prf(SK_p*, identity)
Bytes signed_octets(ByteView message, ByteView peer_nonce, ByteView sk_p, const std::string& identity) {
    return concat(message, peer_nonce, kdf::prf(sk_p, as_bytes(identity)));
}

void derive_sa_keys(IkeSa& sa) {
    sa.skeyseed = kdf::derive_skeyseed(sa.ni, sa.nr, sa.g_ir);
    sa.keys = kdf::derive_ike_keys(sa.skeyseed, sa.ni, sa.nr, sa.spi_i, sa.spi_r);
}

Bytes compute_shared(const crypto::DhKeyPair& dh, ByteView peer_public) {
    try {
        return dh.shared_secret(peer_public);
    } catch (const crypto::DhFailure& e) {
        throw IkeError(IkeErrorCode::dh_failure, e.what());
    }
}

FixedBytes<kIkeSpiSize> nonzero_spi() {
    for (;;) {
        auto spi = crypto::random_array<kIkeSpiSize>();
        if (std::any_of(spi.begin(), spi.end(), [](auto b) { return b != 0; })) return spi;
    }
}

}  // namespace

ControlMessage IkeSession::protect(MessageType type, ByteView plaintext) {
    bool initiator = sa_.role == Role::initiator;
    const auto& ek = initiator ? sa_.keys.sk_ei : sa_.keys.sk_er;
    const auto& ak = initiator ? sa_.keys.sk_ai : sa_.keys.sk_ar;
    std::uint32_t id = next_send_id_++;

    Bytes body;
    append(body, sa_.spi_i);
    append(body, sa_.spi_r);
    put_u32(body, id);
    FixedBytes<crypto::kAesGcmNonceSize> nonce{};
    put_be32(nonce.data() + 8, id);
    Bytes aad = concat(FixedBytes<1>{static_cast<std::uint8_t>(type)}, body);
    append(body, crypto::aes256gcm_seal(ek, nonce, aad, plaintext));
    append(body, crypto::hmac_sha256(ak, concat(FixedBytes<1>{static_cast<std::uint8_t>(type)}, body)));
    return {type, std::move(body)};
}

Bytes IkeSession::unprotect(const ControlMessage& msg) {
    bool initiator = sa_.role == Role::initiator;
    const auto& ek = initiator ? sa_.keys.sk_er : sa_.keys.sk_ei;
    const auto& ak = initiator ? sa_.keys.sk_ar : sa_.keys.sk_ai;
    const Bytes& body = msg.body;
    if (body.size() < kEnvelopeHeader + crypto::kAesGcmTagSize + kMacSize) {
        throw ProtocolError("protected message too short");
    }
    ByteView all(body);
    ByteView signed_part = all.first(body.size() - kMacSize);
    auto type_byte = FixedBytes<1>{static_cast<std::uint8_t>(msg.type)};
    auto mac = crypto::hmac_sha256(ak, concat(type_byte, signed_part));
    if (!crypto::constant_time_equal(mac, all.last(kMacSize))) {
        throw IkeError(IkeErrorCode::auth_failure, "control message integrity check failed");
    }
    Reader r(signed_part);
    auto spi_i = r.take_array<kIkeSpiSize>();
    auto spi_r = r.take_array<kIkeSpiSize>();
    std::uint32_t id = r.u32();
    if (spi_i != sa_.spi_i || spi_r != sa_.spi_r) throw ProtocolError("control message for another IKE SA");
    if (id <= highest_recv_id_) throw IkeError(IkeErrorCode::auth_failure, "replayed control message");
    FixedBytes<crypto::kAesGcmNonceSize> nonce{};
    put_be32(nonce.data() + 8, id);
    auto plain = crypto::aes256gcm_open(ek, nonce, concat(type_byte, all.first(kEnvelopeHeader)), r.rest());
    if (!plain) throw IkeError(IkeErrorCode::auth_failure, "control message decryption failed");
    highest_recv_id_ = id;
    return std::move(*plain);
}

InitiatorHandshake::InitiatorHandshake(IkeConfig cfg) : cfg_(std::move(cfg)), dh_(cfg_.dh_group) {
    sa_.role = Role::initiator;
}

ControlMessage InitiatorHandshake::start() {
    sa_.spi_i = nonzero_spi();
    sa_.ni = crypto::random_array<kNonceSize>();
    Bytes body;
    append(body, sa_.spi_i);
    put_u16(body, static_cast<std::uint16_t>(cfg_.dh_group));
    append(body, sa_.ni);
    append(body, dh_.public_value());
    init_request_ = body;
    return {MessageType::init, std::move(body)};
}

ControlMessage InitiatorHandshake::on_init_response(const ControlMessage& msg) {
    if (msg.type != MessageType::init) throw ProtocolError("expected INIT response");
    Reader r(msg.body);
    if (r.take_array<kIkeSpiSize>() != sa_.spi_i) throw ProtocolError("INIT response for another SPI");
    sa_.spi_r = r.take_array<kIkeSpiSize>();
    if (r.u16() != static_cast<std::uint16_t>(cfg_.dh_group)) throw ProtocolError("DH group mismatch");
    sa_.nr = r.take_array<kNonceSize>();
    sa_.g_ir = compute_shared(dh_, r.rest());
    if (sa_.spi_r == sa_.spi_i) throw ProtocolError("responder SPI equals initiator SPI");
    init_response_ = msg.body;
    derive_sa_keys(sa_);

    Bytes body;
    append(body, sa_.spi_i);
    append(body, sa_.spi_r);
    put_u16(body, static_cast<std::uint16_t>(cfg_.identity.size()));
    append(body, as_bytes(cfg_.identity));
    append(body, auth_value(cfg_.pre_shared_key,
                            signed_octets(init_request_, sa_.nr, sa_.keys.sk_pi, cfg_.identity)));
    return {MessageType::auth, std::move(body)};
}

IkeSession InitiatorHandshake::on_auth_response(const ControlMessage& msg) {
    if (msg.type != MessageType::auth) throw ProtocolError("expected AUTH response");
    Reader r(msg.body);
    if (r.take_array<kIkeSpiSize>() != sa_.spi_i || r.take_array<kIkeSpiSize>() != sa_.spi_r) {
        throw ProtocolError("AUTH response for another IKE SA");
    }
    if (r.u8() != 0) throw IkeError(IkeErrorCode::auth_failure, "responder rejected authentication");
    auto id_len = r.u16();
    auto id_bytes = r.take(id_len);
    std::string peer_id(id_bytes.begin(), id_bytes.end());
    auto auth = r.take(kdf::kPrfSize);
    r.expect_end();
    auto expected = auth_value(cfg_.pre_shared_key,
                               signed_octets(init_response_, sa_.ni, sa_.keys.sk_pr, peer_id));
    if (!crypto::constant_time_equal(expected, auth)) {
        throw IkeError(IkeErrorCode::auth_failure, "responder AUTH payload does not verify");
    }
    return IkeSession(sa_);
}

ResponderHandshake::ResponderHandshake(IkeConfig cfg) : cfg_(std::move(cfg)), dh_(cfg_.dh_group) {
    sa_.role = Role::responder;
}

ControlMessage ResponderHandshake::on_init(const ControlMessage& msg) {
    if (msg.type != MessageType::init) throw ProtocolError("expected INIT request");
    Reader r(msg.body);
    sa_.spi_i = r.take_array<kIkeSpiSize>();
    if (r.u16() != static_cast<std::uint16_t>(cfg_.dh_group)) throw ProtocolError("DH group mismatch");
    sa_.ni = r.take_array<kNonceSize>();
    sa_.g_ir = compute_shared(dh_, r.rest());
    do {
        sa_.spi_r = nonzero_spi();
    } while (sa_.spi_r == sa_.spi_i);
    sa_.nr = crypto::random_array<kNonceSize>();
    init_request_ = msg.body;
    derive_sa_keys(sa_);

    Bytes body;
    append(body, sa_.spi_i);
    append(body, sa_.spi_r);
    put_u16(body, static_cast<std::uint16_t>(cfg_.dh_group));
    append(body, sa_.nr);
    append(body, dh_.public_value());
    init_response_ = body;
    return {MessageType::init, std::move(body)};
}

ControlMessage ResponderHandshake::on_auth(const ControlMessage& msg) {
    if (msg.type != MessageType::auth) throw ProtocolError("expected AUTH request");
    Reader r(msg.body);
    if (r.take_array<kIkeSpiSize>() != sa_.spi_i || r.take_array<kIkeSpiSize>() != sa_.spi_r) {
        throw ProtocolError("AUTH request for another IKE SA");
    }
    auto id_len = r.u16();
    auto id_bytes = r.take(id_len);
    std::string peer_id(id_bytes.begin(), id_bytes.end());
    auto auth = r.take(kdf::kPrfSize);
    r.expect_end();

    auto expected = auth_value(cfg_.pre_shared_key,
                               signed_octets(init_request_, sa_.nr, sa_.keys.sk_pi, peer_id));
    Bytes body;
    append(body, sa_.spi_i);
    append(body, sa_.spi_r);
    if (!crypto::constant_time_equal(expected, auth)) {
        failed_ = true;
        body.push_back(1);
        return {MessageType::auth, std::move(body)};
    }
    body.push_back(0);
    put_u16(body, static_cast<std::uint16_t>(cfg_.identity.size()));
    append(body, as_bytes(cfg_.identity));
    append(body, auth_value(cfg_.pre_shared_key,
                            signed_octets(init_response_, sa_.ni, sa_.keys.sk_pr, cfg_.identity)));
    complete_ = true;
    return {MessageType::auth, std::move(body)};
}

IkeSession ResponderHandshake::session() const {
    if (!complete_) throw IkeError(IkeErrorCode::auth_failure, "IKE handshake did not complete");
    return IkeSession(sa_);
}

std::pair<IkeSession, IkeSession> establish_ike_sa(const IkeConfig& initiator_cfg,
                                                   const IkeConfig& responder_cfg,
                                                   const FrameTamper& tamper) {
    InitiatorHandshake ini(initiator_cfg);
    ResponderHandshake res(responder_cfg);
    auto deliver = [&tamper](Role sender, ControlMessage m) {
        if (tamper) tamper(sender, m);
        return m;
    };
    auto init_resp = res.on_init(deliver(Role::initiator, ini.start()));
    auto auth_req = ini.on_init_response(deliver(Role::responder, init_resp));
    auto auth_resp = res.on_auth(deliver(Role::initiator, auth_req));
    if (res.failed()) throw IkeError(IkeErrorCode::auth_failure, "responder rejected initiator AUTH");
    auto initiator_session = ini.on_auth_response(deliver(Role::responder, auth_resp));
    return {std::move(initiator_session), res.session()};
}

IkeSession run_initiator_handshake(ControlChannel& channel, const IkeConfig& cfg) {
    InitiatorHandshake ini(cfg);
    auto init_resp = transact(channel, ini.start());
    auto auth_resp = transact(channel, ini.on_init_response(init_resp));
    return ini.on_auth_response(auth_resp);
}

IkeSession run_responder_handshake(ControlChannel& channel, const IkeConfig& cfg,
                                   std::chrono::milliseconds timeout) {
    ResponderHandshake res(cfg);
    auto init = channel.receive(timeout);
    if (!init) throw ProtocolError("peer closed before INIT");
    channel.send(res.on_init(*init));
    auto auth = channel.receive(timeout);
    if (!auth) throw ProtocolError("peer closed before AUTH");
    channel.send(res.on_auth(*auth));
    return res.session();
}

namespace {

IkeError from_kms(const kms::KmsError& e) {
    switch (e.code()) {
        case kms::ErrorCode::unavailable: return {IkeErrorCode::kms_unavailable, e.what()};
        case kms::ErrorCode::insufficient_keys: return {IkeErrorCode::insufficient_keys, e.what()};
        default: return {IkeErrorCode::kms_rejected, e.what()};
    }
}

ChildStatus status_for(IkeErrorCode code) {
    switch (code) {
        case IkeErrorCode::kms_unavailable: return ChildStatus::kms_unavailable;
        case IkeErrorCode::insufficient_keys: return ChildStatus::insufficient_keys;
        default: return ChildStatus::kms_rejected;
    }
}

IkeErrorCode code_for(ChildStatus status) {
    switch (status) {
        case ChildStatus::kms_unavailable: return IkeErrorCode::kms_unavailable;
        case ChildStatus::insufficient_keys: return IkeErrorCode::insufficient_keys;
        default: return IkeErrorCode::kms_rejected;
    }
}

kdf::ChildSaKeys derive_child(const IkeSa& sa, ByteView qkd_key, const FixedBytes<kNonceSize>& ni,
                              const FixedBytes<kNonceSize>& nr, const Uuid& key_id) {
    auto keys = kdf::split_keymat(kdf::derive_child_keymat(sa.keys.sk_d, qkd_key, ni, nr));
    keys.qkd_key_id = key_id;
    return keys;
}

}  // namespace

ChildRequest begin_create_child(IkeSession& session, kms::KmsClient& kms, const std::string& slave_sae,
                                std::uint32_t new_spi_i) {
    if (session.role() != Role::initiator) throw ProtocolError("only the initiator creates Child SAs");
    std::vector<kms::DeliveredKey> keys;
    try {
        keys = kms::decode_keys(kms.get_enc_keys(slave_sae, 1, kms::kKeySizeBits));
    } catch (const kms::KmsError& e) {
        throw from_kms(e);
    }
    if (keys.size() != 1) throw IkeError(IkeErrorCode::kms_rejected, "KME returned wrong key count");

    ChildRequest req;
    req.pending.qkd_key_id = keys[0].key_id;
    req.pending.qkd_key = keys[0].material;
    req.pending.spi_i = new_spi_i;
    req.pending.ni = crypto::random_array<kNonceSize>();

    Bytes plain;
    append(plain, req.pending.qkd_key_id.bytes);
    put_u32(plain, new_spi_i);
    append(plain, req.pending.ni);
    req.message = session.protect(MessageType::create_child, plain);
    return req;
}

ChildSa complete_create_child(IkeSession& session, const PendingChild& pending, const ControlMessage& reply) {
    if (reply.type != MessageType::create_child) throw ProtocolError("expected CREATE_CHILD response");
    Bytes plain = session.unprotect(reply);
    Reader r(plain);
    auto status = static_cast<ChildStatus>(r.u8());
    auto key_id = Uuid::from_bytes(r.take(16));
    if (key_id != pending.qkd_key_id) throw ProtocolError("CREATE_CHILD response for another key_ID");
    if (status != ChildStatus::ok) {
        throw IkeError(code_for(status), "responder could not obtain QKD key " + key_id.to_string());
    }
    ChildSa child;
    child.role = Role::initiator;
    child.spi_i = pending.spi_i;
    child.spi_r = r.u32();
    child.nr = r.take_array<kNonceSize>();
    r.expect_end();
    child.ni = pending.ni;
    child.keys = derive_child(session.sa(), pending.qkd_key, child.ni, child.nr, key_id);
    return child;
}

ChildResponse handle_create_child(IkeSession& session, kms::KmsClient& kms, const std::string& master_sae,
                                  const ControlMessage& request, std::uint32_t new_spi_r) {
    if (request.type != MessageType::create_child) throw ProtocolError("expected CREATE_CHILD request");
    Bytes plain = session.unprotect(request);
    Reader r(plain);
    auto key_id = Uuid::from_bytes(r.take(16));
    std::uint32_t spi_i = r.u32();
    auto ni = r.take_array<kNonceSize>();
    r.expect_end();

    ChildResponse out;
    Bytes reply;
    FixedBytes<kdf::kQkdKeySize> qkd_key{};
    try {
        std::string id = key_id.to_string();
        auto keys = kms::decode_keys(kms.get_dec_keys(master_sae, std::span(&id, 1)));
        if (keys.size() != 1 || keys[0].key_id != key_id) {
            throw IkeError(IkeErrorCode::kms_rejected, "KME returned the wrong key");
        }
        qkd_key = keys[0].material;
    } catch (const kms::KmsError& e) {
        out.status = status_for(from_kms(e).code());
    } catch (const IkeError& e) {
        out.status = status_for(e.code());
    }

    reply.push_back(static_cast<std::uint8_t>(out.status));
    append(reply, key_id.bytes);
    if (out.status == ChildStatus::ok) {
        ChildSa child;
        child.role = Role::responder;
        child.spi_i = spi_i;
        child.spi_r = new_spi_r;
        child.ni = ni;
        child.nr = crypto::random_array<kNonceSize>();
        child.keys = derive_child(session.sa(), qkd_key, child.ni, child.nr, key_id);
        put_u32(reply, child.spi_r);
        append(reply, child.nr);
        out.child = child;
    }
    out.message = session.protect(MessageType::create_child, reply);
    return out;
}

Bytes encode_spi_pair(const SpiPair& p) {
    Bytes out;
    put_u32(out, p.spi_i);
    put_u32(out, p.spi_r);
    return out;
}

SpiPair decode_spi_pair(ByteView body) {
    Reader r(body);
    SpiPair p;
    p.spi_i = r.u32();
    p.spi_r = r.u32();
    r.expect_end();
    return p;
}

}  // namespace qtunnel::ike
