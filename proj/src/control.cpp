#include "qtunnel/control.hpp"

#include "qtunnel/ike.hpp"

namespace qtunnel::ike {

Bytes ControlMessage::encode() const {
    if (body.size() > kMaxBodySize) throw ProtocolError("control message body too large");
    Bytes out(kFrameHeaderSize + body.size());
    out[0] = static_cast<std::uint8_t>(type);
    put_be32(out.data() + 1, static_cast<std::uint32_t>(body.size()));
    std::copy(body.begin(), body.end(), out.begin() + kFrameHeaderSize);
    return out;
}

ControlMessage ControlMessage::decode(ByteView frame) {
    if (frame.size() < kFrameHeaderSize) throw ProtocolError("truncated control frame");
    auto type = frame[0];
    if (type < 1 || type > 5) throw ProtocolError("unknown control message type");
    std::uint32_t len = get_be32(frame.data() + 1);
    if (frame.size() != kFrameHeaderSize + len) throw ProtocolError("control frame length mismatch");
    return {static_cast<MessageType>(type), Bytes(frame.begin() + kFrameHeaderSize, frame.end())};
}

void TcpControlChannel::send(const ControlMessage& msg) {
    std::lock_guard lock(send_mutex_);
    stream_.send_all(msg.encode());
}

std::optional<ControlMessage> TcpControlChannel::receive(std::chrono::milliseconds timeout) {
    Bytes frame(kFrameHeaderSize);
    if (!stream_.recv_exact(frame, timeout)) return std::nullopt;
    std::uint32_t len = get_be32(frame.data() + 1);
    if (len > kMaxBodySize) throw ProtocolError("control message body too large");
    frame.resize(kFrameHeaderSize + len);
    if (len > 0 && !stream_.recv_exact(std::span(frame).subspan(kFrameHeaderSize), timeout)) {
        throw ProtocolError("connection closed mid-message");
    }
    return ControlMessage::decode(frame);
}

namespace {

struct Pipe {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<Bytes> frames;
    bool closed = false;
};

class MemoryChannel : public ControlChannel {
public:
    MemoryChannel(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
        : in_(std::move(in)), out_(std::move(out)) {}
    ~MemoryChannel() override { close(); }

    void send(const ControlMessage& msg) override {
        std::lock_guard lock(out_->mutex);
        if (out_->closed) throw net::NetError("channel closed");
        out_->frames.push_back(msg.encode());
        out_->cv.notify_all();
    }

    std::optional<ControlMessage> receive(std::chrono::milliseconds timeout) override {
        std::unique_lock lock(in_->mutex);
        if (!in_->cv.wait_for(lock, timeout, [&] { return !in_->frames.empty() || in_->closed; })) {
            throw net::NetError("receive timeout");
        }
        if (in_->frames.empty()) return std::nullopt;
        Bytes frame = std::move(in_->frames.front());
        in_->frames.pop_front();
        return ControlMessage::decode(frame);
    }

    void close() override {
        for (auto* p : {in_.get(), out_.get()}) {
            std::lock_guard lock(p->mutex);
            p->closed = true;
            p->cv.notify_all();
        }
    }

private:
    std::shared_ptr<Pipe> in_;
    std::shared_ptr<Pipe> out_;
};

}  // namespace

std::pair<std::unique_ptr<ControlChannel>, std::unique_ptr<ControlChannel>> make_memory_channel_pair() {
    auto ab = std::make_shared<Pipe>();
    auto ba = std::make_shared<Pipe>();
    return {std::make_unique<MemoryChannel>(ba, ab), std::make_unique<MemoryChannel>(ab, ba)};
}

ControlMessage transact(ControlChannel& channel, const ControlMessage& request,
                        std::chrono::milliseconds timeout) {
    channel.send(request);
    auto reply = channel.receive(timeout);
    if (!reply) throw ProtocolError("peer closed the control channel");
    if (reply->type != request.type) throw ProtocolError("unexpected reply type");
    return *reply;
}

}  // namespace qtunnel::ike
