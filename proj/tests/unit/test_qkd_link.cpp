#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "qtunnel/qkd_link.hpp"

using namespace qtunnel;
using namespace qtunnel::qkd;

namespace {

LinkParams constant_rate(double bps = 7400.0) {
    LinkParams p;
    p.mean_skr_bps = bps;
    p.skr_jitter_rel = 0.0;
    return p;
}

TelemetrySample forced(double qber, double skr = 7400.0) {
    TelemetrySample s;
    s.qber = qber;
    s.skr_bps = skr;
    s.visibility = 1.0 - 2.0 * qber;
    return s;
}

}  // namespace

TEST(LinkParams, Validation) {
    LinkParams p;
    EXPECT_NO_THROW(p.validate());
    auto bad = p;
    bad.mean_skr_bps = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = p;
    bad.qber_mean = 0.2;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = p;
    bad.qber_abort_threshold = 0.5;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = p;
    bad.visibility_mean = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = p;
    bad.key_block_bits = 128;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    EXPECT_THROW(QkdLink{bad}, std::invalid_argument);
}

TEST(QkdLink, OneSecondAtConstantRate) {
    QkdLink link(constant_rate());
    auto step = link.advance(1.0);
    EXPECT_EQ(step.batch.size(), 28u);
    // 7400 - 28 * 256 = 232 bits retained
    EXPECT_EQ(link.accumulated_microbits(), 232 * QkdLink::kMicroBitsPerBit);
    for (const auto& kb : step.batch) EXPECT_EQ(kb.material.size(), 32u);
}

TEST(QkdLink, ZeroDtEmitsNothing) {
    QkdLink link(constant_rate());
    link.advance(0.5);
    auto before = link.accumulated_microbits();
    auto step = link.advance(0.0);
    EXPECT_TRUE(step.batch.empty());
    EXPECT_EQ(link.accumulated_microbits(), before);
    EXPECT_THROW(link.advance(-1.0), std::invalid_argument);
}

TEST(QkdLink, TwoMinutesAtConstantRate) {
    QkdLink link(constant_rate());
    std::size_t total = 0;
    for (int i = 0; i < 120; ++i) total += link.advance(1.0).batch.size();
    // floor(7400 * 120 / 256)
    EXPECT_EQ(total, 3468u);
    EXPECT_EQ(link.blocks_emitted(), 3468u);
}

TEST(QkdLink, ConservationUnderJitterAndFractionalSteps) {
    LinkParams p;
    p.seed = 99;
    QkdLink link(p);
    std::int64_t emitted_bits = 0;
    for (int i = 0; i < 2000; ++i) {
        double dt = 0.1 + 0.013 * (i % 17);
        emitted_bits += static_cast<std::int64_t>(link.advance(dt).batch.size()) * 256;
    }
    EXPECT_EQ(emitted_bits * QkdLink::kMicroBitsPerBit + link.accumulated_microbits(), link.total_input_microbits());
    EXPECT_LT(link.accumulated_microbits(), 256 * QkdLink::kMicroBitsPerBit);
}

TEST(QkdLink, DeterministicForSeed) {
    LinkParams p;
    p.seed = 1234;
    QkdLink a(p), b(p);
    for (int i = 0; i < 50; ++i) {
        auto sa = a.advance(1.0);
        auto sb = b.advance(1.0);
        ASSERT_EQ(sa.batch, sb.batch);
        EXPECT_EQ(sa.sample.qber, sb.sample.qber);
    }
    p.seed = 1235;
    QkdLink c(p);
    QkdLink d(LinkParams{.seed = 1234});
    EXPECT_NE(c.advance(1.0).batch.front().key_id, d.advance(1.0).batch.front().key_id);
}

TEST(QkdLink, KeyIdsUniqueOverLifetime) {
    QkdLink link(LinkParams{});
    std::unordered_set<Uuid> ids;
    for (int i = 0; i < 600; ++i) {
        for (const auto& kb : link.advance(1.0).batch) ASSERT_TRUE(ids.insert(kb.key_id).second);
    }
    EXPECT_GT(ids.size(), 16000u);
}

TEST(Telemetry, QberVisibilityIdentity) {
    EXPECT_NEAR(qber_from_visibility(0.986, 0.0), 0.007, 1e-12);
    EXPECT_EQ(qber_from_visibility(1.0, 0.0), 0.0);
}

TEST(Telemetry, SampleMeansConverge) {
    LinkParams p;
    SimRng rng(5);
    double q = 0, v = 0, s = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto t = sample_telemetry(p, rng);
        EXPECT_LE(std::abs(t.qber - (1.0 - t.visibility) / 2.0), kMaxQberNoise + 1e-12);
        EXPECT_TRUE(t.link_up);
        q += t.qber;
        v += t.visibility;
        s += t.skr_bps;
    }
    EXPECT_NEAR(q / n, 0.008, 0.001);
    EXPECT_NEAR(v / n, 0.986, 0.002);
    EXPECT_NEAR(s / n, 7400.0, 100.0);
    // three standard errors of the configured skr distribution
    EXPECT_NEAR(s / n, 7400.0, 3 * 0.05 * 7400.0 / std::sqrt(n));
}

TEST(Telemetry, AbortRule) {
    LinkParams p;
    EXPECT_EQ(check_abort(forced(0.008), p), LinkStatus::up);
    EXPECT_EQ(check_abort(forced(0.11), p), LinkStatus::down);
    EXPECT_EQ(check_abort(forced(0.1099), p), LinkStatus::up);
}

TEST(QkdLink, NoKeysWhileAborted) {
    QkdLink link(constant_rate());
    for (int i = 0; i < 3; ++i) {
        auto step = link.advance(1.0, forced(0.2));
        EXPECT_TRUE(step.batch.empty());
        EXPECT_FALSE(step.sample.link_up);
        EXPECT_FALSE(link.link_up());
    }
    EXPECT_EQ(link.accumulated_microbits(), 0);
    auto step = link.advance(1.0, forced(0.008));
    EXPECT_TRUE(link.link_up());
    EXPECT_EQ(step.batch.size(), 28u);
}

TEST(Telemetry, CsvFormat) {
    std::ostringstream out;
    write_telemetry_csv_header(out);
    TelemetrySample s{2.0, 7400.0, 0.008, 0.986, true};
    write_telemetry_csv_row(out, s);
    EXPECT_EQ(out.str(), "t,skr_bps,qber,visibility,link_up\n2,7400,0.008,0.986,1\n");
}
