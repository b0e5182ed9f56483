#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "qtunnel/control.hpp"
#include "qtunnel/crypto.hpp"
#include "qtunnel/kdf.hpp"
#include "qtunnel/kms.hpp"

namespace qtunnel::ike {

enum class IkeErrorCode {
    auth_failure,
    dh_failure,
    protocol,
    kms_unavailable,
    insufficient_keys,
    kms_rejected,
};

const char* to_string(IkeErrorCode code);

class IkeError : public std::runtime_error {
public:
    IkeError(IkeErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    IkeErrorCode code() const { return code_; }

private:
    IkeErrorCode code_;
};

class ProtocolError : public IkeError {
public:
    explicit ProtocolError(const std::string& what) : IkeError(IkeErrorCode::protocol, what) {}
};

enum class Role { initiator, responder };

struct IkeConfig {
    std::string identity;
    Bytes pre_shared_key;
    crypto::DhGroup dh_group = crypto::DhGroup::curve25519;
};

inline constexpr std::size_t kIkeSpiSize = 8;
inline constexpr std::size_t kNonceSize = 32;

struct IkeSa {
    FixedBytes<kIkeSpiSize> spi_i{};
    FixedBytes<kIkeSpiSize> spi_r{};
    FixedBytes<kNonceSize> ni{};
    FixedBytes<kNonceSize> nr{};
    Bytes g_ir;
    kdf::PrfOutput skeyseed{};
    kdf::IkeKeys keys;
    std::string prf_alg = "HMAC-SHA-256";
    Role role = Role::initiator;
};

// Established IKE SA plus the protected envelope for post-AUTH messages:
// spi_i | spi_r | msg_id(4) | AES-256-GCM(sk_e*) | HMAC-SHA-256(sk_a*).
class IkeSession {
public:
    explicit IkeSession(IkeSa sa) : sa_(std::move(sa)) {}

    const IkeSa& sa() const { return sa_; }
    Role role() const { return sa_.role; }

    ControlMessage protect(MessageType type, ByteView plaintext);
    // Throws IkeError(auth_failure) on MAC/tag failure or a replayed msg_id.
    Bytes unprotect(const ControlMessage& msg);

private:
    IkeSa sa_;
    std::uint32_t next_send_id_ = 1;
    std::uint32_t highest_recv_id_ = 0;
};

// IKE_SA_INIT + AUTH, initiator half.
class InitiatorHandshake {
public:
    explicit InitiatorHandshake(IkeConfig cfg);

    ControlMessage start();
    // Completes the DH exchange and returns the AUTH request.
    ControlMessage on_init_response(const ControlMessage& msg);
    // Verifies the responder's AUTH. Throws IkeError(auth_failure).
    IkeSession on_auth_response(const ControlMessage& msg);

private:
    IkeConfig cfg_;
    crypto::DhKeyPair dh_;
    IkeSa sa_;
    Bytes init_request_;
    Bytes init_response_;
};

class ResponderHandshake {
public:
    explicit ResponderHandshake(IkeConfig cfg);

    ControlMessage on_init(const ControlMessage& msg);
    // Returns the AUTH response; on failure the response carries a failure
    // status and failed() becomes true.
    ControlMessage on_auth(const ControlMessage& msg);

    bool failed() const { return failed_; }
    // Throws IkeError(auth_failure) if the handshake did not complete.
    IkeSession session() const;

private:
    IkeConfig cfg_;
    crypto::DhKeyPair dh_;
    IkeSa sa_;
    Bytes init_request_;
    Bytes init_response_;
    bool complete_ = false;
    bool failed_ = false;
};

// Runs both handshake halves in process. `tamper` may rewrite any frame in
// flight (test hook for active attacks).
using FrameTamper = std::function<void(Role sender, ControlMessage&)>;
std::pair<IkeSession, IkeSession> establish_ike_sa(const IkeConfig& initiator_cfg,
                                                   const IkeConfig& responder_cfg,
                                                   const FrameTamper& tamper = {});

// Handshake over a channel; responder side blocks on receive.
IkeSession run_initiator_handshake(ControlChannel& channel, const IkeConfig& cfg);
IkeSession run_responder_handshake(ControlChannel& channel, const IkeConfig& cfg,
                                   std::chrono::milliseconds timeout = std::chrono::seconds(10));

// Negotiated Child SA (one side's view).
struct ChildSa {
    std::uint32_t spi_i = 0;  // initiator's inbound SPI
    std::uint32_t spi_r = 0;  // responder's inbound SPI
    FixedBytes<kNonceSize> ni{};
    FixedBytes<kNonceSize> nr{};
    kdf::ChildSaKeys keys;
    Role role = Role::initiator;

    std::uint32_t inbound_spi() const { return role == Role::initiator ? spi_i : spi_r; }
    std::uint32_t outbound_spi() const { return role == Role::initiator ? spi_r : spi_i; }
};

// Status octet of a CREATE_CHILD response.
enum class ChildStatus : std::uint8_t { ok = 0, kms_unavailable = 1, insufficient_keys = 2, kms_rejected = 3 };

struct PendingChild {
    Uuid qkd_key_id;
    FixedBytes<kdf::kQkdKeySize> qkd_key{};
    std::uint32_t spi_i = 0;
    FixedBytes<kNonceSize> ni{};
};

struct ChildRequest {
    ControlMessage message;
    PendingChild pending;
};

// Initiator: fetches one QKD key as master SAE and builds CREATE_CHILD.
// KMS failures surface as IkeError before anything is sent.
ChildRequest begin_create_child(IkeSession& session, kms::KmsClient& kms, const std::string& slave_sae,
                                std::uint32_t new_spi_i);

// Initiator: derives the Child SA from the responder's reply.
ChildSa complete_create_child(IkeSession& session, const PendingChild& pending, const ControlMessage& reply);

struct ChildResponse {
    ControlMessage message;
    std::optional<ChildSa> child;  // nullopt when the responder could not fetch the key
    ChildStatus status = ChildStatus::ok;
};

// Responder: fetches the announced key as slave SAE and derives the Child SA.
ChildResponse handle_create_child(IkeSession& session, kms::KmsClient& kms, const std::string& master_sae,
                                  const ControlMessage& request, std::uint32_t new_spi_r);

// Cleartext payloads of CONFIRM / RETIRE (carried inside the protected envelope).
struct SpiPair {
    std::uint32_t spi_i = 0;
    std::uint32_t spi_r = 0;
};
Bytes encode_spi_pair(const SpiPair& p);
SpiPair decode_spi_pair(ByteView body);

}  // namespace qtunnel::ike
