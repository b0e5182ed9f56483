#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>

#include "qtunnel/bytes.hpp"
#include "qtunnel/net.hpp"

namespace qtunnel::ike {

enum class MessageType : std::uint8_t {
    init = 1,
    auth = 2,
    create_child = 3,
    confirm = 4,
    retire = 5,
};

// Framed as type(1) | length(4, BE) | body.
struct ControlMessage {
    MessageType type = MessageType::init;
    Bytes body;

    Bytes encode() const;
    // Throws ProtocolError on truncated input or an unknown type.
    static ControlMessage decode(ByteView frame);

    bool operator==(const ControlMessage&) const = default;
};

inline constexpr std::size_t kFrameHeaderSize = 5;
inline constexpr std::uint32_t kMaxBodySize = 64 * 1024;

class ControlChannel {
public:
    virtual ~ControlChannel() = default;
    virtual void send(const ControlMessage& msg) = 0;
    // nullopt when the peer closed the channel; throws on timeout.
    virtual std::optional<ControlMessage> receive(std::chrono::milliseconds timeout) = 0;
    virtual void close() = 0;
};

class TcpControlChannel : public ControlChannel {
public:
    explicit TcpControlChannel(net::TcpStream stream) : stream_(std::move(stream)) {}

    void send(const ControlMessage& msg) override;
    std::optional<ControlMessage> receive(std::chrono::milliseconds timeout) override;
    void close() override { stream_.shutdown(); }

private:
    net::TcpStream stream_;
    std::mutex send_mutex_;
};

// In-process channel pair; messages still go through encode/decode.
std::pair<std::unique_ptr<ControlChannel>, std::unique_ptr<ControlChannel>> make_memory_channel_pair();

// Sends a request and waits for the reply.
ControlMessage transact(ControlChannel& channel, const ControlMessage& request,
                        std::chrono::milliseconds timeout = std::chrono::seconds(5));

}  // namespace qtunnel::ike
