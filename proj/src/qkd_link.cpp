#include "qtunnel/qkd_link.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace qtunnel::qkd {

void LinkParams::validate() const {
    if (!(mean_skr_bps > 0)) throw std::invalid_argument("mean_skr_bps must be > 0");
    if (!(qber_mean >= 0 && qber_mean < qber_abort_threshold && qber_abort_threshold < 0.5)) {
        throw std::invalid_argument("require 0 <= qber_mean < qber_abort_threshold < 0.5");
    }
    if (!(visibility_mean > 0 && visibility_mean <= 1)) {
        throw std::invalid_argument("visibility_mean must be in (0, 1]");
    }
    if (!(skr_jitter_rel >= 0)) throw std::invalid_argument("skr_jitter_rel must be >= 0");
    if (key_block_bits != kKeyBlockBits) throw std::invalid_argument("key_block_bits must be 256");
    if (!(visibility_sigma >= 0 && qber_noise_sigma >= 0)) {
        throw std::invalid_argument("noise sigmas must be >= 0");
    }
}

double qber_from_visibility(double visibility, double noise) {
    return std::max(0.0, (1.0 - visibility) / 2.0 + noise);
}

TelemetrySample sample_telemetry(const LinkParams& params, SimRng& rng) {
    TelemetrySample s;
    auto normal = [&rng](double mean, double sigma) {
        if (sigma <= 0) return mean;
        return std::normal_distribution<double>(mean, sigma)(rng);
    };

    s.visibility = std::clamp(normal(params.visibility_mean, params.visibility_sigma), 1e-9, 1.0);

    // The configured mean qber sits slightly above (1 - V)/2; the noise term
    // carries that offset and stays within the coupling band.
    double offset = std::clamp(params.qber_mean - (1.0 - params.visibility_mean) / 2.0,
                               -kMaxQberNoise, kMaxQberNoise);
    double noise = std::clamp(normal(offset, params.qber_noise_sigma), -kMaxQberNoise, kMaxQberNoise);
    s.qber = qber_from_visibility(s.visibility, noise);

    s.skr_bps = std::max(0.0, normal(params.mean_skr_bps, params.skr_jitter_rel * params.mean_skr_bps));
    s.link_up = check_abort(s, params) == LinkStatus::up;
    return s;
}

LinkStatus check_abort(const TelemetrySample& sample, const LinkParams& params) {
    return sample.qber >= params.qber_abort_threshold ? LinkStatus::down : LinkStatus::up;
}

QkdLink::QkdLink(LinkParams params)
    : params_(params),
      telemetry_rng_(params.seed),
      key_rng_(params.seed ^ 0x9e3779b97f4a7c15ULL) {
    params_.validate();
}

LinkStep QkdLink::advance(double dt) {
    TelemetrySample sample = sample_telemetry(params_, telemetry_rng_);
    return emit(dt, sample);
}

LinkStep QkdLink::advance(double dt, TelemetrySample forced) {
    forced.link_up = check_abort(forced, params_) == LinkStatus::up;
    return emit(dt, forced);
}

LinkStep QkdLink::emit(double dt, TelemetrySample sample) {
    if (dt < 0) throw std::invalid_argument("dt must be >= 0");
    now_ += dt;
    sample.t = now_;
    link_up_ = sample.link_up;

    LinkStep step;
    step.sample = sample;
    if (!link_up_) return step;

    auto input = static_cast<std::int64_t>(
        std::llround(sample.skr_bps * dt * static_cast<double>(kMicroBitsPerBit)));
    total_input_ += input;
    accumulator_ += input;

    constexpr std::int64_t block = kKeyBlockBits * kMicroBitsPerBit;
    auto count = accumulator_ / block;
    accumulator_ -= count * block;
    step.batch.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        KeyBlock kb;
        kb.key_id = Uuid::random_v4(key_rng_);
        for (std::size_t off = 0; off < kb.material.size(); off += 8) {
            std::uint64_t word = key_rng_();
            for (std::size_t j = 0; j < 8; ++j) {
                kb.material[off + j] = static_cast<std::uint8_t>(word >> (8 * j));
            }
        }
        kb.created_at = now_;
        step.batch.push_back(kb);
    }
    blocks_emitted_ += static_cast<std::uint64_t>(count);
    return step;
}

void write_telemetry_csv_header(std::ostream& out) {
    out << "t,skr_bps,qber,visibility,link_up\n";
}

void write_telemetry_csv_row(std::ostream& out, const TelemetrySample& s) {
    out << s.t << ',' << s.skr_bps << ',' << s.qber << ',' << s.visibility << ','
        << (s.link_up ? 1 : 0) << '\n';
}

}  // namespace qtunnel::qkd
