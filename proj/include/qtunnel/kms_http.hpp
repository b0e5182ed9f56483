#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "qtunnel/kms.hpp"

namespace httplib {
class Server;
class Client;
}  // namespace httplib

namespace qtunnel::kms {

// ETSI-QKD-014 REST front end for one side of a KeyPlane.
//
//   GET  /api/v1/keys/{slave_SAE_ID}/status
//   POST /api/v1/keys/{slave_SAE_ID}/enc_keys   {"number": n, "size": bits}
//   POST /api/v1/keys/{master_SAE_ID}/dec_keys  {"key_IDs": [{"key_ID": "..."}]}
//
// Callers authenticate with `Authorization: Bearer <token>`. Errors carry
// {"message": "...", "details": [{"code": "..."}]}.
class KmeServer {
public:
    KmeServer(KeyPlane& plane, Side side);
    ~KmeServer();
    KmeServer(const KmeServer&) = delete;
    KmeServer& operator=(const KmeServer&) = delete;

    // Binds (port 0 picks a free port on first start; later starts reuse it).
    void start();
    void stop();
    bool running() const;

    const std::string& host() const { return host_; }
    std::uint16_t port() const { return port_; }

private:
    std::unique_ptr<httplib::Server> make_server();

    KeyPlane& plane_;
    Side side_;
    std::string host_;
    std::uint16_t port_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    mutable std::mutex mutex_;
};

class HttpKmsClient : public KmsClient {
public:
    HttpKmsClient(std::string host, std::uint16_t port, std::string sae_id, std::string token);
    ~HttpKmsClient() override;

    const std::string& sae_id() const override { return sae_id_; }
    StatusDoc get_status(const std::string& slave_sae) override;
    KeyContainer get_enc_keys(const std::string& slave_sae, int number, int size) override;
    KeyContainer get_dec_keys(const std::string& master_sae,
                              std::span<const std::string> key_ids) override;

private:
    std::string sae_id_;
    std::string token_;
    std::unique_ptr<httplib::Client> client_;
    std::mutex mutex_;
};

}  // namespace qtunnel::kms
