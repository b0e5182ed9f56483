#pragma once

#include <cstddef>
#include <stdexcept>

#include "qtunnel/bytes.hpp"
#include "qtunnel/uuid.hpp"

// IKEv2 key schedule with a QKD key mixed into Child SA keying material:
//
//   SKEYSEED = prf(Ni | Nr, g^ir)
//   {SK_d | SK_ai | SK_ar | SK_ei | SK_er | SK_pi | SK_pr} = prf+(SKEYSEED, Ni | Nr | SPIi | SPIr)
//   KEYMAT   = prf+(SK_d, QKD_Key | Ni | Nr)
//
// prf is HMAC-SHA-256 throughout.
namespace qtunnel::kdf {

inline constexpr std::size_t kPrfSize = 32;
inline constexpr std::size_t kPrfPlusMax = 255 * kPrfSize;
inline constexpr std::size_t kQkdKeySize = 32;
inline constexpr std::size_t kChildKeymatSize = 72;

using PrfOutput = FixedBytes<kPrfSize>;

enum class KdfErrorCode { empty_key, too_long, bad_qkd_key_length, bad_length, empty_input };

class KdfError : public std::invalid_argument {
public:
    KdfError(KdfErrorCode code, const char* what) : std::invalid_argument(what), code_(code) {}
    KdfErrorCode code() const { return code_; }

private:
    KdfErrorCode code_;
};

PrfOutput prf(ByteView key, ByteView data);

// T1 = prf(K, S | 0x01), Tn = prf(K, Tn-1 | S | n); returns the first out_len octets.
Bytes prf_plus(ByteView key, ByteView data, std::size_t out_len);

PrfOutput derive_skeyseed(ByteView ni, ByteView nr, ByteView g_ir);

struct IkeKeys {
    PrfOutput sk_d{};
    PrfOutput sk_ai{};
    PrfOutput sk_ar{};
    PrfOutput sk_ei{};
    PrfOutput sk_er{};
    PrfOutput sk_pi{};
    PrfOutput sk_pr{};

    bool operator==(const IkeKeys&) const = default;
};

IkeKeys derive_ike_keys(ByteView skeyseed, ByteView ni, ByteView nr, ByteView spi_i, ByteView spi_r);

Bytes derive_child_keymat(ByteView sk_d, ByteView qkd_key, ByteView ni, ByteView nr,
                          std::size_t out_len = kChildKeymatSize);

// Directional AES-256-GCM keys and 4-byte salts for one Child SA.
struct ChildSaKeys {
    FixedBytes<32> ek_i2r{};
    FixedBytes<4> salt_i2r{};
    FixedBytes<32> ek_r2i{};
    FixedBytes<4> salt_r2i{};
    Uuid qkd_key_id;

    bool operator==(const ChildSaKeys&) const = default;
};

// Initiator-to-responder material first: ek_i2r | salt_i2r | ek_r2i | salt_r2i.
ChildSaKeys split_keymat(ByteView keymat);

}  // namespace qtunnel::kdf
