#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>

#include "qtunnel/bytes.hpp"

namespace qtunnel::crypto {

inline constexpr std::size_t kHmacSha256Size = 32;
inline constexpr std::size_t kAesGcmKeySize = 32;
inline constexpr std::size_t kAesGcmNonceSize = 12;
inline constexpr std::size_t kAesGcmTagSize = 16;

class CryptoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Fills from the OpenSSL CSPRNG.
Bytes random_bytes(std::size_t n);

template <std::size_t N>
FixedBytes<N> random_array() {
    FixedBytes<N> out{};
    Bytes r = random_bytes(N);
    std::copy(r.begin(), r.end(), out.begin());
    return out;
}

FixedBytes<kHmacSha256Size> hmac_sha256(ByteView key, ByteView data);

bool constant_time_equal(ByteView a, ByteView b);

// AES-256-GCM. seal returns ciphertext || tag.
Bytes aes256gcm_seal(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext);

// Writes ciphertext || tag into out (out.size() == plaintext.size() + 16).
void aes256gcm_seal_into(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext,
                         std::span<std::uint8_t> out);

// Returns nullopt when the tag does not verify.
std::optional<Bytes> aes256gcm_open(ByteView key, ByteView nonce, ByteView aad,
                                    ByteView ciphertext_and_tag);

// IKEv2 transform ids for the supported ECDH groups.
enum class DhGroup : std::uint16_t {
    curve25519 = 31,
    curve448 = 32,
};

std::size_t dh_public_size(DhGroup group);

class DhFailure : public CryptoError {
public:
    using CryptoError::CryptoError;
};

// Ephemeral ECDH key pair.
class DhKeyPair {
public:
    explicit DhKeyPair(DhGroup group);
    ~DhKeyPair();
    DhKeyPair(DhKeyPair&&) noexcept;
    DhKeyPair& operator=(DhKeyPair&&) noexcept;
    DhKeyPair(const DhKeyPair&) = delete;
    DhKeyPair& operator=(const DhKeyPair&) = delete;

    DhGroup group() const { return group_; }
    const Bytes& public_value() const { return public_; }

    // Throws DhFailure for malformed or low-order peer values.
    Bytes shared_secret(ByteView peer_public) const;

private:
    struct Impl;
    DhGroup group_;
    std::unique_ptr<Impl> impl_;
    Bytes public_;
};

}  // namespace qtunnel::crypto
