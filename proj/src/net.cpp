#include "qtunnel/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace qtunnel::net {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw NetError(what + ": " + std::strerror(errno));
}

std::uint16_t local_port(int fd) {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) fail("getsockname");
    return ntohs(addr.sin_port);
}

// 1 if readable/writable, 0 on timeout.
int wait_for(int fd, short events, std::optional<std::chrono::milliseconds> timeout) {
    pollfd p{fd, events, 0};
    int ms = timeout ? static_cast<int>(timeout->count()) : -1;
    for (;;) {
        int rc = ::poll(&p, 1, ms);
        if (rc >= 0) return rc;
        if (errno != EINTR) fail("poll");
    }
}

}  // namespace

void Fd::reset() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

sockaddr_in Endpoint::to_sockaddr() const {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw NetError("invalid IPv4 address " + host);
    }
    return addr;
}

Endpoint parse_endpoint(const std::string& text) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos) throw NetError("endpoint must be host:port: " + text);
    Endpoint ep;
    ep.host = text.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw NetError("invalid port in " + text);
    }
    if (port < 0 || port > 65535) throw NetError("port out of range in " + text);
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

TcpStream TcpStream::connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
    if (!fd.valid()) fail("socket");
    auto addr = ep.to_sockaddr();
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        if (errno != EINPROGRESS) fail("connect " + ep.to_string());
        if (wait_for(fd.get(), POLLOUT, timeout) == 0) throw NetError("connect timeout " + ep.to_string());
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            errno = err;
            fail("connect " + ep.to_string());
        }
    }
    int flags = ::fcntl(fd.get(), F_GETFL);
    ::fcntl(fd.get(), F_SETFL, flags & ~O_NONBLOCK);
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpStream(std::move(fd));
}

void TcpStream::send_all(ByteView data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd_.get(), data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail("send");
        }
        sent += static_cast<std::size_t>(n);
    }
}

bool TcpStream::recv_exact(std::span<std::uint8_t> out, std::optional<std::chrono::milliseconds> timeout) {
    std::size_t got = 0;
    while (got < out.size()) {
        if (wait_for(fd_.get(), POLLIN, timeout) == 0) throw NetError("receive timeout");
        ssize_t n = ::recv(fd_.get(), out.data() + got, out.size() - got, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail("recv");
        }
        if (n == 0) {
            if (got == 0) return false;
            throw NetError("connection closed mid-message");
        }
        got += static_cast<std::size_t>(n);
    }
    return true;
}

void TcpStream::shutdown() {
    if (fd_.valid()) ::shutdown(fd_.get(), SHUT_RDWR);
}

TcpListener TcpListener::bind(const Endpoint& ep) {
    TcpListener l;
    l.fd_ = Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!l.fd_.valid()) fail("socket");
    int one = 1;
    ::setsockopt(l.fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    auto addr = ep.to_sockaddr();
    if (::bind(l.fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        fail("bind " + ep.to_string());
    }
    if (::listen(l.fd_.get(), 16) != 0) fail("listen");
    l.port_ = local_port(l.fd_.get());
    return l;
}

std::optional<TcpStream> TcpListener::accept(std::chrono::milliseconds timeout) {
    if (wait_for(fd_.get(), POLLIN, timeout) == 0) return std::nullopt;
    Fd fd(::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!fd.valid()) fail("accept");
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpStream(std::move(fd));
}

UdpSocket UdpSocket::bind(const Endpoint& ep, int buffer_bytes) {
    UdpSocket s;
    s.fd_ = Fd(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0));
    if (!s.fd_.valid()) fail("socket");
    // best effort; capped by net.core.{r,w}mem_max
    ::setsockopt(s.fd_.get(), SOL_SOCKET, SO_RCVBUF, &buffer_bytes, sizeof(buffer_bytes));
    ::setsockopt(s.fd_.get(), SOL_SOCKET, SO_SNDBUF, &buffer_bytes, sizeof(buffer_bytes));
    auto addr = ep.to_sockaddr();
    if (::bind(s.fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        fail("bind " + ep.to_string());
    }
    s.port_ = local_port(s.fd_.get());
    return s;
}

void UdpSocket::connect(const Endpoint& peer) {
    auto addr = peer.to_sockaddr();
    if (::connect(fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        fail("udp connect " + peer.to_string());
    }
}

bool UdpSocket::send(ByteView datagram) {
    for (;;) {
        ssize_t n = ::send(fd_.get(), datagram.data(), datagram.size(), 0);
        if (n >= 0) return static_cast<std::size_t>(n) == datagram.size();
        if (errno == EINTR) continue;
        return false;
    }
}

std::optional<std::size_t> UdpSocket::recv(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout) {
    if (wait_for(fd_.get(), POLLIN, timeout) == 0) return std::nullopt;
    for (;;) {
        ssize_t n = ::recv(fd_.get(), buf.data(), buf.size(), 0);
        if (n >= 0) return static_cast<std::size_t>(n);
        if (errno == EINTR) continue;
        // ECONNREFUSED from a previous send to a closed peer port
        if (errno == ECONNREFUSED) return std::nullopt;
        fail("udp recv");
    }
}

}  // namespace qtunnel::net
