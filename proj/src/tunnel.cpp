#include "qtunnel/tunnel.hpp"

#include <random>

namespace qtunnel::tunnel {

DataSaPair make_data_sas(const ike::ChildSa& child) {
    using dataplane::DataSa;
    using dataplane::Direction;
    const auto& k = child.keys;
    if (child.role == ike::Role::initiator) {
        return {std::make_shared<DataSa>(child.spi_i, Direction::inbound, k.ek_r2i, k.salt_r2i),
                std::make_shared<DataSa>(child.spi_r, Direction::outbound, k.ek_i2r, k.salt_i2r)};
    }
    return {std::make_shared<DataSa>(child.spi_r, Direction::inbound, k.ek_i2r, k.salt_i2r),
            std::make_shared<DataSa>(child.spi_i, Direction::outbound, k.ek_r2i, k.salt_r2i)};
}

std::uint32_t allocate_spi(const dataplane::SaTable& table, double now) {
    for (;;) {
        Bytes r = crypto::random_bytes(4);
        std::uint32_t spi = get_be32(r.data());
        // SPIs below 256 are reserved in ESP
        if (spi >= 256 && !table.find_inbound(spi, now)) return spi;
    }
}

TunnelInitiator::TunnelInitiator(ike::IkeSession session, kms::KmsClient& kms, std::string slave_sae,
                                 ike::ControlChannel& channel, dataplane::SaTable& table,
                                 ike::RekeyPolicy policy)
    : session_(std::move(session)),
      kms_(kms),
      slave_sae_(std::move(slave_sae)),
      channel_(channel),
      table_(table),
      scheduler_(policy, 0.0) {}

const ike::ChildSa& TunnelInitiator::create_initial(double now) {
    const auto& child = negotiate(now, true);
    scheduler_ = ike::RekeyScheduler(scheduler_.policy(), now);
    return child;
}

const ike::ChildSa& TunnelInitiator::rekey(double now) { return negotiate(now, false); }

const ike::ChildSa& TunnelInitiator::negotiate(double now, bool initial) {
    std::uint32_t spi_i = allocate_spi(table_, now);
    RekeyEvent ev;
    ev.t = now;
    ev.initial = initial;
    try {
        auto req = ike::begin_create_child(session_, kms_, slave_sae_, spi_i);
        ev.qkd_key_id = req.pending.qkd_key_id.to_string();
        auto reply = ike::transact(channel_, req.message);
        ike::ChildSa child = ike::complete_create_child(session_, req.pending, reply);

        // responder already accepts on child.spi_r, so switch outbound now
        auto sas = make_data_sas(child);
        table_.install(sas.inbound, sas.outbound);

        auto confirm = session_.protect(ike::MessageType::confirm,
                                        ike::encode_spi_pair({child.spi_i, child.spi_r}));
        auto ack = ike::transact(channel_, confirm);
        session_.unprotect(ack);

        std::optional<ike::ChildSa> old;
        {
            std::lock_guard lock(log_mutex_);
            old = active_;
            active_ = child;
            history_.push_back(child);
        }
        if (old) {
            auto retire = session_.protect(ike::MessageType::retire,
                                           ike::encode_spi_pair({old->spi_i, old->spi_r}));
            table_.retire(old->spi_i, scheduler_.policy().grace, now);
            session_.unprotect(ike::transact(channel_, retire));
        }
        ev.ok = true;
        ev.spi_i = child.spi_i;
        ev.spi_r = child.spi_r;
        record(ev);
        std::lock_guard lock(log_mutex_);
        return *active_;
    } catch (const ike::IkeError& e) {
        ev.error = std::string(ike::to_string(e.code())) + ": " + e.what();
        record(ev);
        throw;
    } catch (const net::NetError& e) {
        ev.error = std::string("control channel: ") + e.what();
        record(ev);
        throw ike::ProtocolError(ev.error);
    }
}

bool TunnelInitiator::poll(double now) {
    table_.purge(now);
    if (scheduler_.overdue(now) && !alarm_raised_) {
        alarm_raised_ = true;
        std::lock_guard lock(log_mutex_);
        alarms_.push_back({now, "Child SA exceeded rekey interval + grace; retaining active SA"});
    }
    if (!scheduler_.due(now)) return false;
    try {
        rekey(now);
        scheduler_.on_success(now);
        alarm_raised_ = false;
    } catch (const ike::IkeError& e) {
        scheduler_.on_failure(now);
        std::lock_guard lock(log_mutex_);
        alarms_.push_back({now, std::string("rekey failed (") + e.what() + "), retry in " +
                                    std::to_string(scheduler_.backoff_for(scheduler_.consecutive_failures())) +
                                    " s"});
    }
    return true;
}

void TunnelInitiator::record(RekeyEvent e) {
    std::lock_guard lock(log_mutex_);
    events_.push_back(std::move(e));
}

std::optional<ike::ChildSa> TunnelInitiator::active() const {
    std::lock_guard lock(log_mutex_);
    return active_;
}

ike::RekeyScheduler TunnelInitiator::scheduler() const { return scheduler_; }

std::vector<RekeyEvent> TunnelInitiator::events() const {
    std::lock_guard lock(log_mutex_);
    return events_;
}

std::vector<ike::ChildSa> TunnelInitiator::history() const {
    std::lock_guard lock(log_mutex_);
    return history_;
}

std::vector<AlarmEvent> TunnelInitiator::alarms() const {
    std::lock_guard lock(log_mutex_);
    return alarms_;
}

TunnelResponder::TunnelResponder(ike::IkeSession session, kms::KmsClient& kms, std::string master_sae,
                                 dataplane::SaTable& table, ike::RekeyPolicy policy)
    : session_(std::move(session)),
      kms_(kms),
      master_sae_(std::move(master_sae)),
      table_(table),
      policy_(policy) {
    policy_.validate();
}

ike::ControlMessage TunnelResponder::handle(const ike::ControlMessage& msg, double now) {
    table_.purge(now);
    switch (msg.type) {
        case ike::MessageType::create_child: {
            // an unconfirmed earlier attempt never carried traffic
            if (pending_) {
                table_.remove(pending_->spi_r);
                pending_.reset();
            }
            auto resp = ike::handle_create_child(session_, kms_, master_sae_, msg, allocate_spi(table_, now));
            RekeyEvent ev;
            ev.t = now;
            if (resp.child) {
                auto sas = make_data_sas(*resp.child);
                table_.install_inbound(sas.inbound);
                pending_ = resp.child;
                ev.ok = true;
                ev.qkd_key_id = resp.child->keys.qkd_key_id.to_string();
                ev.spi_i = resp.child->spi_i;
                ev.spi_r = resp.child->spi_r;
            } else {
                ev.error = "QKD key fetch failed (status " + std::to_string(static_cast<int>(resp.status)) + ")";
            }
            std::lock_guard lock(log_mutex_);
            events_.push_back(ev);
            return resp.message;
        }
        case ike::MessageType::confirm: {
            auto pair = ike::decode_spi_pair(session_.unprotect(msg));
            if (!pending_ || pending_->spi_i != pair.spi_i || pending_->spi_r != pair.spi_r) {
                throw ike::ProtocolError("CONFIRM for an unknown Child SA");
            }
            table_.set_outbound(make_data_sas(*pending_).outbound);
            {
                std::lock_guard lock(log_mutex_);
                active_ = pending_;
                history_.push_back(*pending_);
            }
            pending_.reset();
            return session_.protect(ike::MessageType::confirm, ike::encode_spi_pair(pair));
        }
        case ike::MessageType::retire: {
            auto pair = ike::decode_spi_pair(session_.unprotect(msg));
            if (active_ && pair.spi_r == active_->spi_r) {
                throw ike::ProtocolError("RETIRE names the active Child SA");
            }
            table_.retire(pair.spi_r, policy_.grace, now);
            return session_.protect(ike::MessageType::retire, ike::encode_spi_pair(pair));
        }
        default:
            throw ike::ProtocolError("unexpected control message type");
    }
}

void TunnelResponder::serve(ike::ControlChannel& channel, const std::function<double()>& clock,
                            const std::atomic<bool>& stop) {
    while (!stop.load()) {
        std::optional<ike::ControlMessage> msg;
        try {
            msg = channel.receive(std::chrono::milliseconds(200));
        } catch (const net::NetError&) {
            continue;  // receive timeout; re-check stop flag
        }
        if (!msg) return;
        try {
            channel.send(handle(*msg, clock()));
        } catch (const ike::IkeError&) {
            // no reply; the initiator times out and keeps its active SA
        }
    }
}

std::optional<ike::ChildSa> TunnelResponder::active() const {
    std::lock_guard lock(log_mutex_);
    return active_;
}

std::vector<RekeyEvent> TunnelResponder::events() const {
    std::lock_guard lock(log_mutex_);
    return events_;
}

std::vector<ike::ChildSa> TunnelResponder::history() const {
    std::lock_guard lock(log_mutex_);
    return history_;
}

void InlineResponderChannel::send(const ike::ControlMessage& msg) {
    if (closed_) throw net::NetError("channel closed");
    // the wire encoding is still exercised
    auto frame = msg.encode();
    replies_.push_back(responder_.handle(ike::ControlMessage::decode(frame), clock_()));
}

std::optional<ike::ControlMessage> InlineResponderChannel::receive(std::chrono::milliseconds) {
    if (replies_.empty()) {
        if (closed_) return std::nullopt;
        throw net::NetError("receive timeout");
    }
    auto msg = std::move(replies_.front());
    replies_.pop_front();
    return msg;
}

}  // namespace qtunnel::tunnel
