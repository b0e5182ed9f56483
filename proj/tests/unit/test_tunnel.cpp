#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "fixtures.hpp"
#include "qtunnel/tunnel.hpp"

using namespace qtunnel;
using namespace qtunnel::tunnel;
using ike::RekeyPolicy;
using ike::RekeyScheduler;

TEST(RekeyScheduler, BackoffSequence) {
    RekeyScheduler s({30.0, 5.0}, 0.0);
    EXPECT_DOUBLE_EQ(s.backoff_for(1), 1.25);
    EXPECT_DOUBLE_EQ(s.backoff_for(2), 2.5);
    EXPECT_DOUBLE_EQ(s.backoff_for(3), 5.0);
    EXPECT_DOUBLE_EQ(s.backoff_for(4), 5.0);
    EXPECT_DOUBLE_EQ(s.backoff_for(40), 5.0);
    for (int n = 1; n < 64; ++n) EXPECT_LE(s.backoff_for(n), 5.0);
}

TEST(RekeyScheduler, TimerAndOverdue) {
    RekeyScheduler s({30.0, 5.0}, 10.0);
    EXPECT_FALSE(s.due(39.9));
    EXPECT_TRUE(s.due(40.0));
    s.on_failure(40.0);
    EXPECT_EQ(s.consecutive_failures(), 1);
    EXPECT_DOUBLE_EQ(s.next_attempt(), 41.25);
    s.on_failure(41.25);
    EXPECT_DOUBLE_EQ(s.next_attempt(), 43.75);
    EXPECT_FALSE(s.overdue(45.0));
    EXPECT_TRUE(s.overdue(45.01));
    s.on_success(46.0);
    EXPECT_EQ(s.consecutive_failures(), 0);
    EXPECT_DOUBLE_EQ(s.next_attempt(), 76.0);
    EXPECT_FALSE(s.overdue(80.0));
}

TEST(RekeyPolicy, Validation) {
    EXPECT_THROW(RekeyPolicy({5.0, 5.0}).validate(), std::invalid_argument);
    EXPECT_THROW(RekeyPolicy({5.0, 0.0}).validate(), std::invalid_argument);
    EXPECT_THROW(RekeyPolicy({5.0, -1.0}).validate(), std::invalid_argument);
    EXPECT_NO_THROW(RekeyPolicy({1.0, 0.5}).validate());
}

namespace {

// Both ends of one tunnel in simulated time.
struct Harness {
    std::unique_ptr<kms::KeyPlane> plane;
    qkd::QkdLink link{fixtures::constant_link()};
    kms::LocalKmsClient kms_a;
    kms::LocalKmsClient kms_b;
    dataplane::SaTable table_a;
    dataplane::SaTable table_b;
    double now = 0.0;
    std::unique_ptr<TunnelResponder> responder;
    std::unique_ptr<InlineResponderChannel> channel;
    std::unique_ptr<TunnelInitiator> initiator;

    explicit Harness(RekeyPolicy policy = {30.0, 5.0}, int fill_seconds = 10, std::size_t max_keys = 100000)
        : plane(fixtures::make_plane(max_keys)),
          kms_a(*plane, kms::Side::a, "fw-a"),
          kms_b(*plane, kms::Side::b, "fw-b") {
        fixtures::fill(*plane, link, fill_seconds);
        auto [ci, cr] = fixtures::ike_pair();
        auto [si, sr] = ike::establish_ike_sa(ci, cr);
        responder = std::make_unique<TunnelResponder>(std::move(sr), kms_b, "fw-a", table_b, policy);
        channel = std::make_unique<InlineResponderChannel>(*responder, [this] { return now; });
        initiator = std::make_unique<TunnelInitiator>(std::move(si), kms_a, "fw-b", *channel, table_a, policy);
    }

    std::size_t stored() const { return plane->counters(kms::Side::a).stored_key_count; }

    // a -> b and b -> a with the currently installed outbound SAs
    bool exchange(std::string_view text) {
        auto out_a = table_a.outbound();
        auto out_b = table_b.outbound();
        if (!out_a || !out_b) return false;
        auto ab = table_b.open(dataplane::seal(*out_a, as_bytes(text), now).encode(), now);
        auto ba = table_a.open(dataplane::seal(*out_b, as_bytes(text), now).encode(), now);
        return ab.status == dataplane::OpenStatus::ok && ba.status == dataplane::OpenStatus::ok &&
               ab.plaintext == Bytes(text.begin(), text.end()) && ba.plaintext == ab.plaintext;
    }
};

}  // namespace

TEST(Tunnel, InitialChildSaInstallsBothSides) {
    Harness h;
    const auto& child = h.initiator->create_initial(0.0);
    ASSERT_TRUE(h.responder->active());
    EXPECT_EQ(child.keys, h.responder->active()->keys);
    EXPECT_EQ(h.table_a.inbound_count(), 1u);
    EXPECT_EQ(h.table_b.inbound_count(), 1u);
    EXPECT_EQ(h.table_a.outbound()->spi(), child.spi_r);
    EXPECT_EQ(h.table_b.outbound()->spi(), child.spi_i);
    EXPECT_TRUE(h.exchange("hello"));
    ASSERT_EQ(h.initiator->events().size(), 1u);
    EXPECT_TRUE(h.initiator->events()[0].initial);
}

TEST(Tunnel, TenRekeysTenFreshKeys) {
    Harness h;
    h.initiator->create_initial(0.0);
    auto before = h.stored();
    std::set<std::string> ids{h.initiator->active()->keys.qkd_key_id.to_string()};
    for (int i = 1; i <= 10; ++i) {
        h.now = 30.0 * i;
        ASSERT_TRUE(h.initiator->poll(h.now));
        auto ev = h.initiator->events().back();
        ASSERT_TRUE(ev.ok) << ev.error;
        ids.insert(ev.qkd_key_id);
        EXPECT_TRUE(h.exchange("after rekey"));
    }
    EXPECT_EQ(ids.size(), 11u);
    EXPECT_EQ(before - h.stored(), 10u);
    EXPECT_EQ(h.initiator->history().size(), 11u);
    EXPECT_EQ(h.responder->history().size(), 11u);
    EXPECT_TRUE(h.initiator->alarms().empty());
}

TEST(Tunnel, PollWaitsForInterval) {
    Harness h;
    h.initiator->create_initial(0.0);
    EXPECT_FALSE(h.initiator->poll(10.0));
    EXPECT_FALSE(h.initiator->poll(29.9));
    EXPECT_TRUE(h.initiator->poll(30.0));
}

TEST(Tunnel, HundredRekeysPairwiseDistinct) {
    Harness h({1.0, 0.25}, 10);
    h.initiator->create_initial(0.0);
    for (int i = 1; i <= 100; ++i) {
        h.now = i;
        h.initiator->rekey(h.now);
    }
    auto hist = h.initiator->history();
    ASSERT_EQ(hist.size(), 101u);
    std::set<std::string> ids;
    std::set<FixedBytes<32>> keys;
    std::set<std::uint32_t> spis;
    for (const auto& c : hist) {
        ids.insert(c.keys.qkd_key_id.to_string());
        keys.insert(c.keys.ek_i2r);
        keys.insert(c.keys.ek_r2i);
        spis.insert(c.spi_i);
        spis.insert(c.spi_r);
    }
    EXPECT_EQ(ids.size(), 101u);
    EXPECT_EQ(keys.size(), 202u);
    EXPECT_EQ(spis.size(), 202u);
    auto rhist = h.responder->history();
    ASSERT_EQ(rhist.size(), hist.size());
    for (std::size_t i = 0; i < hist.size(); ++i) EXPECT_EQ(hist[i].keys, rhist[i].keys);
}

TEST(Tunnel, RoleSymmetry) {
    Harness h;
    auto child = h.initiator->create_initial(0.0);
    auto peer = *h.responder->active();
    EXPECT_EQ(child.role, ike::Role::initiator);
    EXPECT_EQ(peer.role, ike::Role::responder);
    EXPECT_EQ(child.inbound_spi(), peer.outbound_spi());
    EXPECT_EQ(child.outbound_spi(), peer.inbound_spi());
    auto a = make_data_sas(child);
    auto b = make_data_sas(peer);
    EXPECT_EQ(a.outbound->key(), b.inbound->key());
    EXPECT_EQ(a.inbound->key(), b.outbound->key());
    EXPECT_NE(a.inbound->key(), a.outbound->key());
    EXPECT_NE(a.inbound->salt(), a.outbound->salt());
}

TEST(Tunnel, KmsExhaustedRetainsSaAndAlarms) {
    // exactly one key: the initial SA uses it and every rekey finds the store empty
    Harness h({10.0, 4.0}, 0);
    qkd::QkdLink one(fixtures::constant_link(9));
    auto batch = one.advance(1.0).batch;
    batch.resize(1);
    h.plane->ingest(batch);

    auto initial = h.initiator->create_initial(0.0);
    h.now = 10.0;
    EXPECT_TRUE(h.initiator->poll(h.now));
    EXPECT_FALSE(h.initiator->events().back().ok);
    EXPECT_EQ(h.initiator->active()->keys, initial.keys);
    EXPECT_TRUE(h.exchange("still up"));
    EXPECT_EQ(h.initiator->scheduler().consecutive_failures(), 1);
    EXPECT_DOUBLE_EQ(h.initiator->scheduler().next_attempt(), 11.0);

    // retries follow the backoff and never exceed grace apart
    std::vector<double> attempts;
    for (h.now = 10.0; h.now <= 16.0; h.now += 0.125) {
        if (h.initiator->poll(h.now)) attempts.push_back(h.now);
    }
    ASSERT_EQ(attempts.size(), 2u);
    EXPECT_DOUBLE_EQ(attempts[0], 11.0);
    EXPECT_DOUBLE_EQ(attempts[1], 13.0);
    for (std::size_t i = 1; i < attempts.size(); ++i) EXPECT_LE(attempts[i] - attempts[i - 1], 4.0);

    // past interval + grace the overdue alarm fires once
    auto alarms = h.initiator->alarms();
    auto overdue = std::count_if(alarms.begin(), alarms.end(),
                                 [](const AlarmEvent& a) { return a.message.find("exceeded") != std::string::npos; });
    EXPECT_EQ(overdue, 1);
    EXPECT_TRUE(h.exchange("still up"));

    // keys return: the next retry succeeds
    h.plane->ingest(one.advance(1.0).batch);
    double resumed = -1;
    for (; h.now <= 30.0; h.now += 0.125) {
        if (h.initiator->poll(h.now) && h.initiator->events().back().ok) {
            resumed = h.now;
            break;
        }
    }
    ASSERT_GT(resumed, 0);
    EXPECT_LE(resumed - 16.0, 4.0 + 0.125);
    EXPECT_NE(h.initiator->active()->keys, initial.keys);
    EXPECT_EQ(h.initiator->scheduler().consecutive_failures(), 0);
    EXPECT_TRUE(h.exchange("rekeyed"));
}

TEST(Tunnel, ResponderKmsDownNoPartialInstall) {
    Harness h;
    h.initiator->create_initial(0.0);
    auto inbound_a = h.table_a.inbound_count();
    auto inbound_b = h.table_b.inbound_count();
    h.kms_b.set_available(false);
    h.now = 30.0;
    EXPECT_THROW(h.initiator->rekey(h.now), ike::IkeError);
    EXPECT_EQ(h.table_a.inbound_count(), inbound_a);
    EXPECT_EQ(h.table_b.inbound_count(), inbound_b);
    EXPECT_EQ(h.initiator->active()->keys, h.responder->active()->keys);
    EXPECT_TRUE(h.exchange("unchanged"));
    h.kms_b.set_available(true);
    EXPECT_NO_THROW(h.initiator->rekey(h.now));
    EXPECT_TRUE(h.exchange("fresh"));
}

TEST(Tunnel, OldSaAcceptsInFlightPacketsDuringGrace) {
    Harness h({30.0, 5.0});
    h.initiator->create_initial(0.0);
    auto old_out = h.table_a.outbound();
    auto in_flight = dataplane::seal(*old_out, as_bytes("late"), 29.9).encode();
    h.now = 30.0;
    h.initiator->rekey(h.now);
    EXPECT_NE(h.table_a.outbound()->spi(), old_out->spi());
    EXPECT_EQ(h.table_b.open(in_flight, 32.0).status, dataplane::OpenStatus::ok);
    auto again = dataplane::seal(*old_out, as_bytes("late"), 29.9).encode();
    EXPECT_EQ(h.table_b.open(again, 35.5).status, dataplane::OpenStatus::unknown_spi);
}

TEST(Tunnel, TrafficContinuityAcrossRekeys) {
    // 10 packets per simulated 10 ms, rekey every 1 s, for 20 s
    Harness h({1.0, 0.25}, 10);
    h.initiator->create_initial(0.0);
    std::uint64_t sent = 0;
    for (int tick = 0; tick < 2000; ++tick) {
        h.now = tick * 0.01;
        h.initiator->poll(h.now);
        for (int p = 0; p < 10; ++p) {
            ASSERT_TRUE(h.exchange("payload")) << "t=" << h.now;
            sent += 2;
        }
    }
    auto ca = h.table_a.counters();
    auto cb = h.table_b.counters();
    EXPECT_EQ(ca.accepted + cb.accepted, sent);
    EXPECT_EQ(ca.total() - ca.accepted, 0u);
    EXPECT_EQ(cb.total() - cb.accepted, 0u);
    EXPECT_GE(h.initiator->history().size(), 20u);
}

TEST(Tunnel, ThreadedResponderOverTcp) {
    auto plane = fixtures::make_plane();
    qkd::QkdLink link(fixtures::constant_link());
    fixtures::fill(*plane, link, 5);
    kms::LocalKmsClient kms_a(*plane, kms::Side::a, "fw-a"), kms_b(*plane, kms::Side::b, "fw-b");
    dataplane::SaTable ta, tb;
    auto listener = net::TcpListener::bind({"127.0.0.1", 0});
    auto [ci, cr] = fixtures::ike_pair();
    std::atomic<bool> stop{false};
    std::unique_ptr<TunnelResponder> responder;
    std::thread t([&] {
        auto stream = listener.accept(std::chrono::seconds(5));
        if (!stream) return;
        ike::TcpControlChannel ch(std::move(*stream));
        auto session = ike::run_responder_handshake(ch, cr);
        responder = std::make_unique<TunnelResponder>(std::move(session), kms_b, "fw-a", tb, RekeyPolicy{30, 5});
        responder->serve(ch, [] { return 0.0; }, stop);
    });
    ike::TcpControlChannel ch(net::TcpStream::connect({"127.0.0.1", listener.port()}));
    TunnelInitiator ini(ike::run_initiator_handshake(ch, ci), kms_a, "fw-b", ch, ta, {30, 5});
    ini.create_initial(0.0);
    for (int i = 1; i <= 5; ++i) ini.rekey(30.0 * i);
    stop = true;
    ch.close();
    t.join();
    ASSERT_TRUE(responder);
    EXPECT_EQ(ini.active()->keys, responder->active()->keys);
    EXPECT_EQ(ini.history().size(), 6u);
}
