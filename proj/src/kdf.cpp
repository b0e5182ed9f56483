#include "qtunnel/kdf.hpp"

#include <algorithm>

#include "qtunnel/crypto.hpp"

namespace qtunnel::kdf {

PrfOutput prf(ByteView key, ByteView data) {
    if (key.empty()) throw KdfError(KdfErrorCode::empty_key, "prf key must not be empty");
    return crypto::hmac_sha256(key, data);
}

Bytes prf_plus(ByteView key, ByteView data, std::size_t out_len) {
    if (out_len > kPrfPlusMax) throw KdfError(KdfErrorCode::too_long, "prf+ output exceeds 255 blocks");
    if (out_len == 0) throw KdfError(KdfErrorCode::bad_length, "prf+ output length must be >= 1");
    Bytes out;
    out.reserve(out_len + kPrfSize);
    Bytes block_input;
    PrfOutput t{};
    for (std::size_t n = 1; out.size() < out_len; ++n) {
        block_input.clear();
        if (n > 1) append(block_input, t);
        append(block_input, data);
        block_input.push_back(static_cast<std::uint8_t>(n));
        t = prf(key, block_input);
        append(out, t);
    }
    out.resize(out_len);
    return out;
}

PrfOutput derive_skeyseed(ByteView ni, ByteView nr, ByteView g_ir) {
    if (ni.empty() || nr.empty() || g_ir.empty()) {
        throw KdfError(KdfErrorCode::empty_input, "nonces and shared secret must not be empty");
    }
    return prf(concat(ni, nr), g_ir);
}

IkeKeys derive_ike_keys(ByteView skeyseed, ByteView ni, ByteView nr, ByteView spi_i, ByteView spi_r) {
    if (ni.empty() || nr.empty() || spi_i.empty() || spi_r.empty()) {
        throw KdfError(KdfErrorCode::empty_input, "IKE key derivation inputs must not be empty");
    }
    Bytes stream = prf_plus(skeyseed, concat(ni, nr, spi_i, spi_r), 7 * kPrfSize);
    IkeKeys keys;
    auto take = [&stream, offset = std::size_t{0}](PrfOutput& dst) mutable {
        std::copy_n(stream.begin() + static_cast<std::ptrdiff_t>(offset), kPrfSize, dst.begin());
        offset += kPrfSize;
    };
    for (auto* k : {&keys.sk_d, &keys.sk_ai, &keys.sk_ar, &keys.sk_ei, &keys.sk_er, &keys.sk_pi,
                    &keys.sk_pr}) {
        take(*k);
    }
    return keys;
}

Bytes derive_child_keymat(ByteView sk_d, ByteView qkd_key, ByteView ni, ByteView nr, std::size_t out_len) {
    if (qkd_key.size() != kQkdKeySize) {
        throw KdfError(KdfErrorCode::bad_qkd_key_length, "QKD key must be 32 bytes");
    }
    return prf_plus(sk_d, concat(qkd_key, ni, nr), out_len);
}

ChildSaKeys split_keymat(ByteView keymat) {
    if (keymat.size() != kChildKeymatSize) {
        throw KdfError(KdfErrorCode::bad_length, "Child SA KEYMAT must be 72 bytes");
    }
    ChildSaKeys k;
    auto it = keymat.begin();
    std::copy_n(it, 32, k.ek_i2r.begin());
    std::copy_n(it + 32, 4, k.salt_i2r.begin());
    std::copy_n(it + 36, 32, k.ek_r2i.begin());
    std::copy_n(it + 68, 4, k.salt_r2i.begin());
    return k;
}

}  // namespace qtunnel::kdf
