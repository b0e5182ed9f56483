#include <gtest/gtest.h>

#include <httplib.h>

#include "fixtures.hpp"
#include "qtunnel/kms_http.hpp"

using namespace qtunnel;
using namespace qtunnel::kms;
using nlohmann::json;

namespace {

class KmsHttp : public ::testing::Test {
protected:
    void SetUp() override {
        plane = fixtures::make_plane(100);
        link = std::make_unique<qkd::QkdLink>(fixtures::constant_link());
        fixtures::fill(*plane, *link, 1);
        server_a = std::make_unique<KmeServer>(*plane, Side::a);
        server_b = std::make_unique<KmeServer>(*plane, Side::b);
        server_a->start();
        server_b->start();
    }

    httplib::Client raw(const KmeServer& s, const std::string& token) {
        httplib::Client c(s.host(), s.port());
        if (!token.empty()) c.set_bearer_token_auth(token);
        return c;
    }

    static std::string error_code(const httplib::Result& r) {
        return json::parse(r->body).at("details").at(0).at("code").get<std::string>();
    }

    std::unique_ptr<KeyPlane> plane;
    std::unique_ptr<qkd::QkdLink> link;
    std::unique_ptr<KmeServer> server_a, server_b;
};

}  // namespace

TEST_F(KmsHttp, StatusOverWire) {
    auto c = raw(*server_a, "token-a");
    auto r = c.Get("/api/v1/keys/fw-b/status");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), "application/json");
    auto j = json::parse(r->body);
    EXPECT_EQ(j.at("stored_key_count"), 28);
    EXPECT_EQ(j.at("key_size"), 256);
    EXPECT_EQ(j.at("source_KME_ID"), "kme-a");
}

TEST_F(KmsHttp, EncDecRoundTripOverWire) {
    auto a = raw(*server_a, "token-a");
    auto b = raw(*server_b, "token-b");
    auto enc = a.Post("/api/v1/keys/fw-b/enc_keys", R"({"number": 2, "size": 256})", "application/json");
    ASSERT_TRUE(enc);
    ASSERT_EQ(enc->status, 200) << enc->body;
    auto ej = json::parse(enc->body);
    ASSERT_EQ(ej.at("keys").size(), 2u);
    json req = {{"key_IDs", json::array()}};
    for (auto& k : ej["keys"]) {
        EXPECT_EQ(base64_decode(k.at("key").get<std::string>()).size(), 32u);
        EXPECT_TRUE(Uuid::parse(k.at("key_ID").get<std::string>()));
        req["key_IDs"].push_back({{"key_ID", k["key_ID"]}});
    }
    auto dec = b.Post("/api/v1/keys/fw-a/dec_keys", req.dump(), "application/json");
    ASSERT_TRUE(dec);
    ASSERT_EQ(dec->status, 200) << dec->body;
    EXPECT_EQ(json::parse(dec->body), ej);

    auto again = b.Post("/api/v1/keys/fw-a/dec_keys", req.dump(), "application/json");
    EXPECT_EQ(again->status, 400);
    EXPECT_EQ(error_code(again), "already_consumed");
    EXPECT_TRUE(json::parse(again->body).at("message").is_string());
}

TEST_F(KmsHttp, ErrorDocuments) {
    auto a = raw(*server_a, "token-a");
    auto r = a.Post("/api/v1/keys/fw-b/enc_keys", R"({"number": 1, "size": 128})", "application/json");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(error_code(r), "bad_size");
    r = a.Post("/api/v1/keys/fw-b/enc_keys", R"({"number": 0, "size": 256})", "application/json");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(error_code(r), "bad_request");
    r = a.Post("/api/v1/keys/fw-b/enc_keys", "{not json", "application/json");
    EXPECT_EQ(r->status, 400);
    r = a.Get("/api/v1/keys/X/status");
    EXPECT_EQ(r->status, 401);
    EXPECT_EQ(error_code(r), "unknown_sae");

    auto anon = raw(*server_a, "");
    EXPECT_EQ(anon.Get("/api/v1/keys/fw-b/status")->status, 401);
    auto wrong = raw(*server_a, "token-b");
    EXPECT_EQ(wrong.Get("/api/v1/keys/fw-b/status")->status, 401);

    auto b = raw(*server_b, "token-b");
    r = b.Post("/api/v1/keys/fw-a/dec_keys", R"({"key_IDs":[{"key_ID":"0b7f1b9a-4c1e-4f60-9a57-8f2f1f6b3c2d"}]})",
               "application/json");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(error_code(r), "unknown_key_id");
}

TEST_F(KmsHttp, ExhaustedStoreIs503) {
    HttpKmsClient client(server_a->host(), server_a->port(), "fw-a", "token-a");
    for (int i = 0; i < 28; ++i) client.get_enc_keys("fw-b", 1, 256);
    auto a = raw(*server_a, "token-a");
    auto r = a.Post("/api/v1/keys/fw-b/enc_keys", R"({"number": 1, "size": 256})", "application/json");
    EXPECT_EQ(r->status, 503);
    EXPECT_EQ(error_code(r), "insufficient_keys");
    try {
        client.get_enc_keys("fw-b", 1, 256);
        FAIL();
    } catch (const KmsError& e) {
        EXPECT_EQ(e.code(), ErrorCode::insufficient_keys);
    }
}

TEST_F(KmsHttp, ClientRoundTrip) {
    HttpKmsClient master(server_a->host(), server_a->port(), "fw-a", "token-a");
    HttpKmsClient slave(server_b->host(), server_b->port(), "fw-b", "token-b");
    EXPECT_EQ(master.get_status("fw-b").stored_key_count, 28u);
    auto enc = master.get_enc_keys("fw-b", 1, 256);
    std::vector<std::string> ids{enc.keys[0].key_ID};
    auto dec = slave.get_dec_keys("fw-a", ids);
    EXPECT_EQ(decode_keys(dec)[0].material, decode_keys(enc)[0].material);
    try {
        slave.get_dec_keys("fw-a", ids);
        FAIL();
    } catch (const KmsError& e) {
        EXPECT_EQ(e.code(), ErrorCode::already_consumed);
    }
}

TEST_F(KmsHttp, StopRestartSamePort) {
    HttpKmsClient master(server_a->host(), server_a->port(), "fw-a", "token-a");
    auto port = server_a->port();
    server_a->stop();
    EXPECT_FALSE(server_a->running());
    try {
        master.get_status("fw-b");
        FAIL();
    } catch (const KmsError& e) {
        EXPECT_EQ(e.code(), ErrorCode::unavailable);
    }
    server_a->start();
    EXPECT_EQ(server_a->port(), port);
    EXPECT_EQ(master.get_status("fw-b").stored_key_count, 28u);
}
