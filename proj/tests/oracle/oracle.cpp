#include "oracle.hpp"

#include <stdexcept>

namespace oracle {

namespace {

constexpr std::uint32_t K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

}  // namespace

std::array<std::uint8_t, 32> sha256(const Buf& msg) {
    std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                          0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    Buf m = msg;
    std::uint64_t bit_len = static_cast<std::uint64_t>(msg.size()) * 8;
    m.push_back(0x80);
    while (m.size() % 64 != 56) m.push_back(0);
    for (int i = 7; i >= 0; --i) m.push_back(static_cast<std::uint8_t>(bit_len >> (8 * i)));

    for (std::size_t off = 0; off < m.size(); off += 64) {
        std::uint32_t w[64];
        for (int t = 0; t < 16; ++t) {
            w[t] = (std::uint32_t(m[off + 4 * t]) << 24) | (std::uint32_t(m[off + 4 * t + 1]) << 16) |
                   (std::uint32_t(m[off + 4 * t + 2]) << 8) | std::uint32_t(m[off + 4 * t + 3]);
        }
        for (int t = 16; t < 64; ++t) {
            std::uint32_t s0 = rotr(w[t - 15], 7) ^ rotr(w[t - 15], 18) ^ (w[t - 15] >> 3);
            std::uint32_t s1 = rotr(w[t - 2], 17) ^ rotr(w[t - 2], 19) ^ (w[t - 2] >> 10);
            w[t] = w[t - 16] + s0 + w[t - 7] + s1;
        }
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int t = 0; t < 64; ++t) {
            std::uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            std::uint32_t ch = (e & f) ^ (~e & g);
            std::uint32_t t1 = hh + S1 + ch + K[t] + w[t];
            std::uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            std::uint32_t t2 = S0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + t1;
            d = c;
            c = b;
            b = a;
            a = t1 + t2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }
    std::array<std::uint8_t, 32> out{};
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 4; ++j) out[4 * i + j] = static_cast<std::uint8_t>(h[i] >> (24 - 8 * j));
    }
    return out;
}

Buf hmac_sha256(const Buf& key, const Buf& msg) {
    Buf k = key;
    if (k.size() > 64) {
        auto d = sha256(k);
        k.assign(d.begin(), d.end());
    }
    k.resize(64, 0);
    Buf inner(64), outer(64);
    for (int i = 0; i < 64; ++i) {
        inner[i] = k[i] ^ 0x36;
        outer[i] = k[i] ^ 0x5c;
    }
    inner.insert(inner.end(), msg.begin(), msg.end());
    auto ih = sha256(inner);
    outer.insert(outer.end(), ih.begin(), ih.end());
    auto oh = sha256(outer);
    return Buf(oh.begin(), oh.end());
}

Buf prf_plus(const Buf& key, const Buf& seed, std::size_t len) {
    Buf out;
    Buf prev;
    for (unsigned n = 1; out.size() < len; ++n) {
        if (n > 255) throw std::length_error("prf+ counter overflow");
        Buf input = prev;
        input.insert(input.end(), seed.begin(), seed.end());
        input.push_back(static_cast<std::uint8_t>(n));
        prev = hmac_sha256(key, input);
        out.insert(out.end(), prev.begin(), prev.end());
    }
    out.resize(len);
    return out;
}

Buf cat(std::initializer_list<Buf> parts) {
    Buf out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

Buf from_hex(const std::string& hex) {
    Buf out;
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
        out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    }
    return out;
}

std::string hex(const Buf& b) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (auto v : b) {
        s.push_back(digits[v >> 4]);
        s.push_back(digits[v & 15]);
    }
    return s;
}

Schedule key_schedule(const Buf& ni, const Buf& nr, const Buf& g_ir, const Buf& spi_i, const Buf& spi_r,
                      const Buf& qkd_key) {
    Schedule s;
    s.skeyseed = hmac_sha256(cat({ni, nr}), g_ir);
    Buf stream = prf_plus(s.skeyseed, cat({ni, nr, spi_i, spi_r}), 7 * 32);
    for (int i = 0; i < 7; ++i) s.sk[i] = Buf(stream.begin() + 32 * i, stream.begin() + 32 * (i + 1));
    s.keymat = prf_plus(s.sk[0], cat({qkd_key, ni, nr}), 72);
    return s;
}

}  // namespace oracle
