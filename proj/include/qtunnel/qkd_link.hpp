#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include "qtunnel/bytes.hpp"
#include "qtunnel/uuid.hpp"

namespace qtunnel::qkd {

inline constexpr int kKeyBlockBits = 256;
inline constexpr std::size_t kKeyBlockBytes = kKeyBlockBits / 8;

// Simulated QKD link operating point.
struct LinkParams {
    double mean_skr_bps = 7400.0;
    double qber_mean = 0.008;
    double visibility_mean = 0.986;
    double skr_jitter_rel = 0.05;
    double qber_abort_threshold = 0.11;
    int key_block_bits = kKeyBlockBits;
    std::uint64_t seed = 1;

    double visibility_sigma = 0.002;
    double qber_noise_sigma = 0.0005;

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;
};

struct KeyBlock {
    Uuid key_id;
    FixedBytes<kKeyBlockBytes> material{};
    double created_at = 0.0;

    bool operator==(const KeyBlock&) const = default;
};

struct TelemetrySample {
    double t = 0.0;
    double skr_bps = 0.0;
    double qber = 0.0;
    double visibility = 1.0;
    bool link_up = true;
};

enum class LinkStatus { up, down };

using SimRng = std::mt19937_64;

// The qber/visibility relation: half the missing interference contrast.
inline constexpr double kMaxQberNoise = 0.002;
double qber_from_visibility(double visibility, double noise);

// Draws one telemetry sample (t left at 0, link_up evaluated against the threshold).
TelemetrySample sample_telemetry(const LinkParams& params, SimRng& rng);

LinkStatus check_abort(const TelemetrySample& sample, const LinkParams& params);

struct LinkStep {
    std::vector<KeyBlock> batch;
    TelemetrySample sample;
};

// Both endpoints of the link read the same emitted blocks, so one object
// stands in for the pair.
class QkdLink {
public:
    explicit QkdLink(LinkParams params);

    // Samples telemetry, then accumulates skr * dt bits if the link is up.
    LinkStep advance(double dt);

    // Same as advance() but with caller-supplied telemetry (fault injection).
    LinkStep advance(double dt, TelemetrySample forced);

    const LinkParams& params() const { return params_; }
    double now() const { return now_; }
    bool link_up() const { return link_up_; }

    // Accumulator bookkeeping in micro-bits so conservation checks are exact.
    static constexpr std::int64_t kMicroBitsPerBit = 1'000'000;
    std::int64_t accumulated_microbits() const { return accumulator_; }
    std::int64_t total_input_microbits() const { return total_input_; }
    std::uint64_t blocks_emitted() const { return blocks_emitted_; }

private:
    LinkStep emit(double dt, TelemetrySample sample);

    LinkParams params_;
    SimRng telemetry_rng_;
    SimRng key_rng_;
    double now_ = 0.0;
    bool link_up_ = true;
    std::int64_t accumulator_ = 0;
    std::int64_t total_input_ = 0;
    std::uint64_t blocks_emitted_ = 0;
};

// Header `t,skr_bps,qber,visibility,link_up`.
void write_telemetry_csv_header(std::ostream& out);
void write_telemetry_csv_row(std::ostream& out, const TelemetrySample& s);

}  // namespace qtunnel::qkd
