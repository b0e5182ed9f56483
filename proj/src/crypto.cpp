#include "qtunnel/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

namespace qtunnel::crypto {

namespace {

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

struct PkeyDeleter {
    void operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }
};
using Pkey = std::unique_ptr<EVP_PKEY, PkeyDeleter>;

struct PkeyCtxDeleter {
    void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
};
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;

void check_gcm_params(ByteView key, ByteView nonce) {
    if (key.size() != kAesGcmKeySize) throw CryptoError("AES-256-GCM key must be 32 bytes");
    if (nonce.size() != kAesGcmNonceSize) throw CryptoError("AES-GCM nonce must be 12 bytes");
}

int nid_for(DhGroup group) {
    switch (group) {
        case DhGroup::curve25519: return EVP_PKEY_X25519;
        case DhGroup::curve448: return EVP_PKEY_X448;
    }
    throw CryptoError("unsupported DH group");
}

}  // namespace

Bytes random_bytes(std::size_t n) {
    Bytes out(n);
    if (n > 0 && RAND_bytes(out.data(), static_cast<int>(n)) != 1) {
        throw CryptoError("RAND_bytes failed");
    }
    return out;
}

FixedBytes<kHmacSha256Size> hmac_sha256(ByteView key, ByteView data) {
    FixedBytes<kHmacSha256Size> out{};
    unsigned int len = 0;
    // HMAC() rejects a null key pointer even with zero length
    static const std::uint8_t empty = 0;
    const void* key_ptr = key.empty() ? &empty : key.data();
    if (HMAC(EVP_sha256(), key_ptr, static_cast<int>(key.size()), data.data(), data.size(),
             out.data(), &len) == nullptr ||
        len != kHmacSha256Size) {
        throw CryptoError("HMAC-SHA-256 failed");
    }
    return out;
}

bool constant_time_equal(ByteView a, ByteView b) {
    return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

void aes256gcm_seal_into(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext,
                         std::span<std::uint8_t> out) {
    check_gcm_params(key, nonce);
    if (out.size() != plaintext.size() + kAesGcmTagSize) {
        throw CryptoError("seal output buffer has wrong size");
    }
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    int len = 0;
    if (!ctx ||
        EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1 ||
        (!aad.empty() &&
         EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) ||
        (!plaintext.empty() &&
         EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                           static_cast<int>(plaintext.size())) != 1) ||
        EVP_EncryptFinal_ex(ctx.get(), out.data() + plaintext.size(), &len) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kAesGcmTagSize,
                            out.data() + plaintext.size()) != 1) {
        throw CryptoError("AES-256-GCM encryption failed");
    }
}

Bytes aes256gcm_seal(ByteView key, ByteView nonce, ByteView aad, ByteView plaintext) {
    Bytes out(plaintext.size() + kAesGcmTagSize);
    aes256gcm_seal_into(key, nonce, aad, plaintext, out);
    return out;
}

std::optional<Bytes> aes256gcm_open(ByteView key, ByteView nonce, ByteView aad,
                                    ByteView ciphertext_and_tag) {
    check_gcm_params(key, nonce);
    if (ciphertext_and_tag.size() < kAesGcmTagSize) return std::nullopt;
    std::size_t ct_len = ciphertext_and_tag.size() - kAesGcmTagSize;
    Bytes tag(ciphertext_and_tag.begin() + static_cast<std::ptrdiff_t>(ct_len),
              ciphertext_and_tag.end());
    Bytes plain(ct_len);
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    int len = 0;
    if (!ctx ||
        EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1 ||
        (!aad.empty() &&
         EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) ||
        (ct_len > 0 && EVP_DecryptUpdate(ctx.get(), plain.data(), &len, ciphertext_and_tag.data(),
                                         static_cast<int>(ct_len)) != 1) ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kAesGcmTagSize, tag.data()) != 1) {
        throw CryptoError("AES-256-GCM decryption setup failed");
    }
    if (EVP_DecryptFinal_ex(ctx.get(), plain.data() + ct_len, &len) != 1) {
        return std::nullopt;
    }
    return plain;
}

std::size_t dh_public_size(DhGroup group) {
    switch (group) {
        case DhGroup::curve25519: return 32;
        case DhGroup::curve448: return 56;
    }
    throw CryptoError("unsupported DH group");
}

struct DhKeyPair::Impl {
    Pkey key;
};

DhKeyPair::DhKeyPair(DhGroup group) : group_(group), impl_(std::make_unique<Impl>()) {
    PkeyCtx ctx(EVP_PKEY_CTX_new_id(nid_for(group), nullptr));
    EVP_PKEY* raw = nullptr;
    if (!ctx || EVP_PKEY_keygen_init(ctx.get()) != 1 || EVP_PKEY_keygen(ctx.get(), &raw) != 1) {
        throw CryptoError("DH key generation failed");
    }
    impl_->key.reset(raw);
    std::size_t len = dh_public_size(group);
    public_.resize(len);
    if (EVP_PKEY_get_raw_public_key(raw, public_.data(), &len) != 1 || len != public_.size()) {
        throw CryptoError("DH public key export failed");
    }
}

DhKeyPair::~DhKeyPair() = default;
DhKeyPair::DhKeyPair(DhKeyPair&&) noexcept = default;
DhKeyPair& DhKeyPair::operator=(DhKeyPair&&) noexcept = default;

Bytes DhKeyPair::shared_secret(ByteView peer_public) const {
    if (peer_public.size() != dh_public_size(group_)) {
        throw DhFailure("DH public value has wrong length");
    }
    Pkey peer(EVP_PKEY_new_raw_public_key(nid_for(group_), nullptr, peer_public.data(),
                                          peer_public.size()));
    if (!peer) throw DhFailure("DH public value rejected");
    PkeyCtx ctx(EVP_PKEY_CTX_new(impl_->key.get(), nullptr));
    std::size_t len = 0;
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
        EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1 ||
        EVP_PKEY_derive(ctx.get(), nullptr, &len) != 1) {
        throw DhFailure("DH derivation failed");
    }
    Bytes secret(len);
    // fails for low-order points (all-zero shared secret)
    if (EVP_PKEY_derive(ctx.get(), secret.data(), &len) != 1) {
        throw DhFailure("DH derivation produced an invalid shared secret");
    }
    secret.resize(len);
    return secret;
}

}  // namespace qtunnel::crypto
