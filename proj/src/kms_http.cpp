#include "qtunnel/kms_http.hpp"

#include <httplib.h>

#include <chrono>
#include <stdexcept>

namespace qtunnel::kms {

namespace {

using nlohmann::json;

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
    res.status = http_status(code);
    json body{{"message", message}, {"details", json::array({json{{"code", to_string(code)}}})}};
    res.set_content(body.dump(), kJson);
}

std::string bearer_token(const httplib::Request& req) {
    auto header = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (header.compare(0, prefix.size(), prefix) != 0) return {};
    return header.substr(prefix.size());
}

ErrorCode code_from_response(int status, const std::string& body) {
    try {
        auto j = json::parse(body);
        auto code = j.at("details").at(0).at("code").get<std::string>();
        for (auto c : {ErrorCode::bad_request, ErrorCode::bad_size, ErrorCode::unknown_sae,
                       ErrorCode::insufficient_keys, ErrorCode::unknown_key_id,
                       ErrorCode::already_consumed, ErrorCode::unavailable}) {
            if (code == to_string(c)) return c;
        }
    } catch (const std::exception&) {
    }
    if (status == 401) return ErrorCode::unknown_sae;
    if (status == 503) return ErrorCode::insufficient_keys;
    return ErrorCode::bad_request;
}

std::string message_from_response(const std::string& body) {
    try {
        return json::parse(body).at("message").get<std::string>();
    } catch (const std::exception&) {
        return body;
    }
}

}  // namespace

KmeServer::KmeServer(KeyPlane& plane, Side side)
    : plane_(plane),
      side_(side),
      host_(plane.config(side).listen_host),
      port_(plane.config(side).listen_port) {}

KmeServer::~KmeServer() { stop(); }

std::unique_ptr<httplib::Server> KmeServer::make_server() {
    auto server = std::make_unique<httplib::Server>();
    // plain SO_REUSEADDR: a second listener on the port is an error, TIME_WAIT is not
    server->set_socket_options([](int sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });

    // Runs the handler as the authenticated caller, mapping KMS errors to
    // their status classes.
    auto guarded = [this](auto&& handler) {
        return [this, handler](const httplib::Request& req, httplib::Response& res) {
            std::string caller = plane_.authenticate(side_, bearer_token(req));
            if (caller.empty()) {
                send_error(res, ErrorCode::unknown_sae, "missing or invalid bearer token");
                return;
            }
            try {
                res.set_content(handler(caller, req).dump(), kJson);
                res.status = 200;
            } catch (const KmsError& e) {
                send_error(res, e.code(), e.what());
            } catch (const json::exception& e) {
                send_error(res, ErrorCode::bad_request, std::string("malformed request body: ") + e.what());
            }
        };
    };

    server->Get(R"(/api/v1/keys/([^/]+)/status)",
                guarded([this](const std::string& caller, const httplib::Request& req) {
                    return json(plane_.get_status(side_, caller, req.matches[1].str()));
                }));

    server->Post(R"(/api/v1/keys/([^/]+)/enc_keys)",
                 guarded([this](const std::string& caller, const httplib::Request& req) {
                     json body = req.body.empty() ? json::object() : json::parse(req.body);
                     auto number = body.value("number", std::int64_t{1});
                     auto size = body.value("size", std::int64_t{plane_.config(side_).key_size_bits});
                     return json(plane_.get_enc_keys(side_, caller, req.matches[1].str(), number, size));
                 }));

    server->Post(R"(/api/v1/keys/([^/]+)/dec_keys)",
                 guarded([this](const std::string& caller, const httplib::Request& req) {
                     json body = json::parse(req.body);
                     std::vector<std::string> ids;
                     for (const auto& item : body.at("key_IDs")) {
                         ids.push_back(item.at("key_ID").get<std::string>());
                     }
                     return json(plane_.get_dec_keys(side_, caller, req.matches[1].str(), ids));
                 }));

    return server;
}

void KmeServer::start() {
    std::lock_guard lock(mutex_);
    if (server_) return;
    auto server = make_server();
    if (port_ == 0) {
        int bound = server->bind_to_any_port(host_);
        if (bound <= 0) throw std::runtime_error("KME " + plane_.config(side_).kme_id + ": bind failed");
        port_ = static_cast<std::uint16_t>(bound);
    } else if (!server->bind_to_port(host_, port_)) {
        throw std::runtime_error("KME " + plane_.config(side_).kme_id + ": cannot bind port " +
                                 std::to_string(port_));
    }
    server_ = std::move(server);
    thread_ = std::thread([s = server_.get()] { s->listen_after_bind(); });
    server_->wait_until_ready();
}

void KmeServer::stop() {
    std::lock_guard lock(mutex_);
    if (!server_) return;
    server_->stop();
    if (thread_.joinable()) thread_.join();
    server_.reset();
}

bool KmeServer::running() const {
    std::lock_guard lock(mutex_);
    return server_ != nullptr;
}

HttpKmsClient::HttpKmsClient(std::string host, std::uint16_t port, std::string sae_id, std::string token)
    : sae_id_(std::move(sae_id)),
      token_(std::move(token)),
      client_(std::make_unique<httplib::Client>(host, port)) {
    client_->set_connection_timeout(std::chrono::seconds(1));
    client_->set_read_timeout(std::chrono::seconds(2));
    client_->set_write_timeout(std::chrono::seconds(2));
    client_->set_bearer_token_auth(token_);
}

HttpKmsClient::~HttpKmsClient() = default;

namespace {

json check_response(const httplib::Result& res) {
    if (!res) {
        throw KmsError(ErrorCode::unavailable, "KME unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw KmsError(code_from_response(res->status, res->body), message_from_response(res->body));
    }
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw KmsError(ErrorCode::unavailable, std::string("malformed KME response: ") + e.what());
    }
}

}  // namespace

StatusDoc HttpKmsClient::get_status(const std::string& slave_sae) {
    std::lock_guard lock(mutex_);
    return check_response(client_->Get("/api/v1/keys/" + slave_sae + "/status")).get<StatusDoc>();
}

KeyContainer HttpKmsClient::get_enc_keys(const std::string& slave_sae, int number, int size) {
    std::lock_guard lock(mutex_);
    json body{{"number", number}, {"size", size}};
    return check_response(client_->Post("/api/v1/keys/" + slave_sae + "/enc_keys", body.dump(), kJson))
        .get<KeyContainer>();
}

KeyContainer HttpKmsClient::get_dec_keys(const std::string& master_sae,
                                         std::span<const std::string> key_ids) {
    std::lock_guard lock(mutex_);
    json body{{"key_IDs", json::array()}};
    for (const auto& id : key_ids) body["key_IDs"].push_back({{"key_ID", id}});
    return check_response(client_->Post("/api/v1/keys/" + master_sae + "/dec_keys", body.dump(), kJson))
        .get<KeyContainer>();
}

}  // namespace qtunnel::kms
