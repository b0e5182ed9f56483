#pragma once

#include <netinet/in.h>

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "qtunnel/bytes.hpp"

namespace qtunnel::net {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Owning file descriptor.
class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    ~Fd() { reset(); }
    Fd(Fd&& other) noexcept : fd_(other.release()) {}
    Fd& operator=(Fd&& other) noexcept {
        if (this != &other) {
            reset();
            fd_ = other.release();
        }
        return *this;
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;

    int get() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release() {
        int fd = fd_;
        fd_ = -1;
        return fd;
    }
    void reset();

private:
    int fd_ = -1;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    sockaddr_in to_sockaddr() const;
    std::string to_string() const { return host + ":" + std::to_string(port); }
};

// Parses "host:port".
Endpoint parse_endpoint(const std::string& text);

class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(Fd fd) : fd_(std::move(fd)) {}

    static TcpStream connect(const Endpoint& ep, std::chrono::milliseconds timeout = std::chrono::seconds(2));

    void send_all(ByteView data);
    // False on orderly close before any byte; throws on timeout or error.
    bool recv_exact(std::span<std::uint8_t> out, std::optional<std::chrono::milliseconds> timeout);
    void shutdown();
    bool valid() const { return fd_.valid(); }

private:
    Fd fd_;
};

class TcpListener {
public:
    // Port 0 picks an ephemeral port.
    static TcpListener bind(const Endpoint& ep);

    std::uint16_t port() const { return port_; }
    // nullopt on timeout.
    std::optional<TcpStream> accept(std::chrono::milliseconds timeout);
    void close() { fd_.reset(); }

private:
    Fd fd_;
    std::uint16_t port_ = 0;
};

class UdpSocket {
public:
    static UdpSocket bind(const Endpoint& ep, int buffer_bytes = 4 << 20);

    std::uint16_t port() const { return port_; }
    int fd() const { return fd_.get(); }
    void connect(const Endpoint& peer);
    // Returns false if the kernel refused the datagram (counts as a tx drop).
    bool send(ByteView datagram);
    // Returns the datagram length, or nullopt on timeout.
    std::optional<std::size_t> recv(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout);
    void close() { fd_.reset(); }

private:
    Fd fd_;
    std::uint16_t port_ = 0;
};

}  // namespace qtunnel::net
