#include <gtest/gtest.h>

#include <thread>

#include "fixtures.hpp"

using namespace qtunnel;
using namespace qtunnel::kms;

namespace {

std::vector<qkd::KeyBlock> blocks(int n, std::uint64_t seed = 1) {
    qkd::QkdLink link(fixtures::constant_link(seed));
    std::vector<qkd::KeyBlock> out;
    while (static_cast<int>(out.size()) < n) {
        for (auto& b : link.advance(1.0).batch) out.push_back(b);
    }
    out.resize(static_cast<std::size_t>(n));
    return out;
}

void expect_error(ErrorCode code, const std::function<void()>& f) {
    try {
        f();
        ADD_FAILURE() << "expected " << to_string(code);
    } catch (const KmsError& e) {
        EXPECT_EQ(e.code(), code) << e.what();
    }
}

}  // namespace

TEST(KmeConfig, Validation) {
    auto [a, b] = fixtures::kme_pair();
    EXPECT_NO_THROW(a.validate());
    auto bad = a;
    bad.peer_kme_id = bad.kme_id;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = a;
    bad.registered_sae_ids.clear();
    bad.sae_tokens.clear();
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = a;
    bad.key_size_bits = 128;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    EXPECT_THROW(KeyPlane(a, a), std::invalid_argument);
}

TEST(ErrorMapping, StatusClasses) {
    EXPECT_EQ(http_status(ErrorCode::bad_request), 400);
    EXPECT_EQ(http_status(ErrorCode::bad_size), 400);
    EXPECT_EQ(http_status(ErrorCode::unknown_key_id), 400);
    EXPECT_EQ(http_status(ErrorCode::already_consumed), 400);
    EXPECT_EQ(http_status(ErrorCode::unknown_sae), 401);
    EXPECT_EQ(http_status(ErrorCode::insufficient_keys), 503);
}

TEST(Ingest, CountsAndFullStore) {
    auto plane = fixtures::make_plane(30);
    auto batch = blocks(28);
    EXPECT_EQ(plane->ingest(batch), 28u);
    EXPECT_EQ(plane->get_status(Side::a, "fw-a", "fw-b").stored_key_count, 28u);
    EXPECT_EQ(plane->ingest(blocks(5, 2)), 2u);
    EXPECT_EQ(plane->ingest(blocks(5, 3)), 0u);
    auto c = plane->counters(Side::b);
    EXPECT_EQ(c.ingested, 38u);
    EXPECT_EQ(c.dropped, 8u);
    EXPECT_EQ(c.stored_key_count, 30u);
}

TEST(Ingest, MirrorsStayIdentical) {
    auto plane = fixtures::make_plane(1000);
    qkd::QkdLink link(fixtures::constant_link());
    std::vector<Uuid> first_eligible;
    for (int i = 0; i < 120; ++i) {
        auto batch = link.advance(1.0).batch;
        for (auto& b : batch) {
            if (first_eligible.size() < 1000) first_eligible.push_back(b.key_id);
        }
        plane->ingest(batch);
    }
    EXPECT_EQ(link.blocks_emitted(), 3468u);
    EXPECT_EQ(plane->available_ids(Side::a), plane->available_ids(Side::b));
    EXPECT_EQ(plane->available_ids(Side::a), first_eligible);
    EXPECT_EQ(plane->counters(Side::a).dropped, 2468u);
}

TEST(Status, DocumentAndErrors) {
    auto plane = fixtures::make_plane();
    plane->ingest(blocks(28));
    auto doc = plane->get_status(Side::a, "fw-a", "fw-b");
    EXPECT_EQ(doc.source_KME_ID, "kme-a");
    EXPECT_EQ(doc.target_KME_ID, "kme-b");
    EXPECT_EQ(doc.master_SAE_ID, "fw-a");
    EXPECT_EQ(doc.slave_SAE_ID, "fw-b");
    EXPECT_EQ(doc.key_size, 256);
    EXPECT_EQ(doc.stored_key_count, 28u);
    EXPECT_EQ(doc.max_key_per_request, 128u);
    expect_error(ErrorCode::unknown_sae, [&] { plane->get_status(Side::a, "fw-a", "X"); });
    plane->get_enc_keys(Side::a, "fw-a", "fw-b", 2, 256);
    EXPECT_EQ(plane->get_status(Side::a, "fw-a", "fw-b").stored_key_count, 26u);
}

TEST(EncKeys, ReservesOldestFirst) {
    auto plane = fixtures::make_plane();
    auto batch = blocks(28);
    plane->ingest(batch);
    auto c = plane->get_enc_keys(Side::a, "fw-a", "fw-b", 1, 256);
    ASSERT_EQ(c.keys.size(), 1u);
    EXPECT_EQ(c.keys[0].key_ID, batch[0].key_id.to_string());
    EXPECT_EQ(base64_decode(c.keys[0].key).size(), 32u);
    EXPECT_EQ(plane->counters(Side::a).stored_key_count, 27u);
    auto c2 = plane->get_enc_keys(Side::a, "fw-a", "fw-b", 3, 256);
    EXPECT_EQ(c2.keys[2].key_ID, batch[3].key_id.to_string());
}

TEST(EncKeys, Errors) {
    auto plane = fixtures::make_plane();
    expect_error(ErrorCode::insufficient_keys, [&] { plane->get_enc_keys(Side::a, "fw-a", "fw-b", 1, 256); });
    plane->ingest(blocks(28));
    expect_error(ErrorCode::bad_request, [&] { plane->get_enc_keys(Side::a, "fw-a", "fw-b", 0, 256); });
    expect_error(ErrorCode::bad_request, [&] { plane->get_enc_keys(Side::a, "fw-a", "fw-b", 129, 256); });
    expect_error(ErrorCode::bad_size, [&] { plane->get_enc_keys(Side::a, "fw-a", "fw-b", 1, 128); });
    expect_error(ErrorCode::unknown_sae, [&] { plane->get_enc_keys(Side::a, "fw-b", "fw-b", 1, 256); });
    expect_error(ErrorCode::unknown_sae, [&] { plane->get_enc_keys(Side::a, "fw-a", "nobody", 1, 256); });
    expect_error(ErrorCode::insufficient_keys, [&] { plane->get_enc_keys(Side::a, "fw-a", "fw-b", 29, 256); });
    EXPECT_EQ(plane->counters(Side::a).stored_key_count, 28u);
}

TEST(DecKeys, MatchedPairAndSingleUse) {
    auto plane = fixtures::make_plane();
    plane->ingest(blocks(28));
    auto enc = plane->get_enc_keys(Side::a, "fw-a", "fw-b", 2, 256);
    std::vector<std::string> ids{enc.keys[0].key_ID, enc.keys[1].key_ID};
    auto dec = plane->get_dec_keys(Side::b, "fw-b", "fw-a", ids);
    EXPECT_EQ(dec, enc);
    expect_error(ErrorCode::already_consumed, [&] { plane->get_dec_keys(Side::b, "fw-b", "fw-a", ids); });
    std::vector<std::string> one{ids[0]};
    expect_error(ErrorCode::already_consumed, [&] { plane->get_dec_keys(Side::b, "fw-b", "fw-a", one); });
    EXPECT_EQ(plane->counters(Side::a).consumed, 2u);
    EXPECT_EQ(plane->counters(Side::b).consumed, 2u);
}

TEST(DecKeys, Errors) {
    auto plane = fixtures::make_plane();
    plane->ingest(blocks(28));
    std::mt19937_64 rng(3);
    std::vector<std::string> fake{Uuid::random_v4(rng).to_string()};
    expect_error(ErrorCode::unknown_key_id, [&] { plane->get_dec_keys(Side::b, "fw-b", "fw-a", fake); });
    std::vector<std::string> junk{"zzz"};
    expect_error(ErrorCode::unknown_key_id, [&] { plane->get_dec_keys(Side::b, "fw-b", "fw-a", junk); });
    expect_error(ErrorCode::bad_request, [&] { plane->get_dec_keys(Side::b, "fw-b", "fw-a", {}); });
    auto enc = plane->get_enc_keys(Side::a, "fw-a", "fw-b", 1, 256);
    std::vector<std::string> ids{enc.keys[0].key_ID};
    expect_error(ErrorCode::unknown_sae, [&] { plane->get_dec_keys(Side::b, "fw-a", "fw-a", ids); });
    // a key reserved for fw-a -> fw-b does not exist for the reversed pair
    expect_error(ErrorCode::unknown_key_id, [&] { plane->get_dec_keys(Side::a, "fw-a", "fw-b", ids); });
    std::vector<std::string> dup{ids[0], ids[0]};
    expect_error(ErrorCode::bad_request, [&] { plane->get_dec_keys(Side::b, "fw-b", "fw-a", dup); });
    // a failed request consumes nothing
    EXPECT_NO_THROW(plane->get_dec_keys(Side::b, "fw-b", "fw-a", ids));
}

TEST(KeyPlane, AccountingUnderConcurrency) {
    auto plane = fixtures::make_plane(5000);
    qkd::QkdLink link(fixtures::constant_link());
    std::atomic<bool> stop{false};
    std::thread feeder([&] {
        for (int i = 0; i < 200; ++i) plane->ingest(link.advance(1.0).batch);
        stop = true;
    });
    std::atomic<int> delivered{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&] {
            while (!stop) {
                try {
                    auto enc = plane->get_enc_keys(Side::a, "fw-a", "fw-b", 3, 256);
                    std::vector<std::string> ids;
                    for (auto& k : enc.keys) ids.push_back(k.key_ID);
                    auto dec = plane->get_dec_keys(Side::b, "fw-b", "fw-a", ids);
                    EXPECT_EQ(dec, enc);
                    delivered += 3;
                } catch (const KmsError& e) {
                    EXPECT_EQ(e.code(), ErrorCode::insufficient_keys);
                }
                auto c = plane->counters(Side::a);
                EXPECT_EQ(c.stored_key_count, c.ingested - c.reserved - c.dropped);
            }
        });
    }
    feeder.join();
    for (auto& t : workers) t.join();
    auto a = plane->counters(Side::a), b = plane->counters(Side::b);
    EXPECT_EQ(a.consumed, static_cast<std::uint64_t>(delivered.load()));
    EXPECT_EQ(a.stored_key_count, b.stored_key_count);
    EXPECT_EQ(plane->available_ids(Side::a), plane->available_ids(Side::b));
    EXPECT_EQ(a.stored_key_count, a.ingested - a.reserved - a.dropped);
}

TEST(Json, KeyContainerValidation) {
    nlohmann::json good = {{"keys", {{{"key_ID", "0b7f1b9a-4c1e-4f60-9a57-8f2f1f6b3c2d"},
                                      {"key", base64_encode(Bytes(32, 1))}}}}};
    EXPECT_NO_THROW(good.get<KeyContainer>());
    auto short_key = good;
    short_key["keys"][0]["key"] = base64_encode(Bytes(16, 1));
    EXPECT_THROW(short_key.get<KeyContainer>(), std::invalid_argument);
    auto dup = good;
    dup["keys"].push_back(good["keys"][0]);
    EXPECT_THROW(dup.get<KeyContainer>(), std::invalid_argument);
    auto bad_id = good;
    bad_id["keys"][0]["key_ID"] = "nope";
    EXPECT_THROW(bad_id.get<KeyContainer>(), std::invalid_argument);
}

TEST(Json, StatusDocFieldNames) {
    StatusDoc s;
    s.source_KME_ID = "kme-a";
    nlohmann::json j = s;
    for (const char* key : {"source_KME_ID", "target_KME_ID", "master_SAE_ID", "slave_SAE_ID", "key_size",
                            "stored_key_count", "max_key_count", "max_key_per_request", "max_key_size",
                            "min_key_size"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_EQ(j.get<StatusDoc>(), s);
}

TEST(LocalClient, Unavailable) {
    auto plane = fixtures::make_plane();
    LocalKmsClient client(*plane, Side::a, "fw-a");
    client.set_available(false);
    expect_error(ErrorCode::unavailable, [&] { client.get_status("fw-b"); });
}
