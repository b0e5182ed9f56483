#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qtunnel/dataplane.hpp"
#include "qtunnel/ike.hpp"
#include "qtunnel/rekey.hpp"

namespace qtunnel::tunnel {

struct RekeyEvent {
    double t = 0.0;
    bool ok = false;
    bool initial = false;
    std::string qkd_key_id;
    std::string error;
    std::uint32_t spi_i = 0;
    std::uint32_t spi_r = 0;
};

struct AlarmEvent {
    double t = 0.0;
    std::string message;
};

// Builds the data-plane SA pair for one side of a Child SA.
struct DataSaPair {
    dataplane::DataSaPtr inbound;
    dataplane::DataSaPtr outbound;
};
DataSaPair make_data_sas(const ike::ChildSa& child);

// Random non-zero SPI not currently installed in the table.
std::uint32_t allocate_spi(const dataplane::SaTable& table, double now);

// Initiator end of a tunnel: master SAE for key delivery, drives Child SA
// creation and make-before-break rekeys over the control channel.
//
// Rekey sequence:
//   CREATE_CHILD  -> responder installs new inbound SA
//   (initiator installs new inbound, switches outbound)
//   CONFIRM       -> responder switches outbound
//   RETIRE        -> both keep the old inbound SA for `grace`, then drop it
class TunnelInitiator {
public:
    TunnelInitiator(ike::IkeSession session, kms::KmsClient& kms, std::string slave_sae,
                    ike::ControlChannel& channel, dataplane::SaTable& table, ike::RekeyPolicy policy);

    // First Child SA. Throws IkeError on failure (nothing installed).
    const ike::ChildSa& create_initial(double now);

    // Runs a rekey if the scheduler says so. Returns true if an attempt was made.
    bool poll(double now);

    // One rekey attempt regardless of the timer. Throws IkeError on failure,
    // leaving the active SA in place.
    const ike::ChildSa& rekey(double now);

    std::optional<ike::ChildSa> active() const;
    ike::RekeyScheduler scheduler() const;
    std::vector<RekeyEvent> events() const;
    std::vector<AlarmEvent> alarms() const;
    // Every Child SA this side has installed, oldest first.
    std::vector<ike::ChildSa> history() const;
    const ike::IkeSession& session() const { return session_; }

private:
    const ike::ChildSa& negotiate(double now, bool initial);
    void record(RekeyEvent e);

    ike::IkeSession session_;
    kms::KmsClient& kms_;
    std::string slave_sae_;
    ike::ControlChannel& channel_;
    dataplane::SaTable& table_;
    ike::RekeyScheduler scheduler_;
    std::optional<ike::ChildSa> active_;
    bool alarm_raised_ = false;
    mutable std::mutex log_mutex_;
    std::vector<RekeyEvent> events_;
    std::vector<AlarmEvent> alarms_;
    std::vector<ike::ChildSa> history_;
};

class TunnelResponder {
public:
    TunnelResponder(ike::IkeSession session, kms::KmsClient& kms, std::string master_sae,
                    dataplane::SaTable& table, ike::RekeyPolicy policy);

    ike::ControlMessage handle(const ike::ControlMessage& msg, double now);

    // Processes requests until the channel closes or `stop` is set.
    void serve(ike::ControlChannel& channel, const std::function<double()>& clock,
               const std::atomic<bool>& stop);

    std::optional<ike::ChildSa> active() const;
    std::vector<RekeyEvent> events() const;
    std::vector<ike::ChildSa> history() const;

private:
    ike::IkeSession session_;
    kms::KmsClient& kms_;
    std::string master_sae_;
    dataplane::SaTable& table_;
    ike::RekeyPolicy policy_;
    std::optional<ike::ChildSa> active_;
    std::optional<ike::ChildSa> pending_;
    mutable std::mutex log_mutex_;
    std::vector<RekeyEvent> events_;
    std::vector<ike::ChildSa> history_;
};

// Channel whose peer is a TunnelResponder called synchronously on send();
// used for simulated-time runs where no control thread exists.
class InlineResponderChannel : public ike::ControlChannel {
public:
    InlineResponderChannel(TunnelResponder& responder, std::function<double()> clock)
        : responder_(responder), clock_(std::move(clock)) {}

    void send(const ike::ControlMessage& msg) override;
    std::optional<ike::ControlMessage> receive(std::chrono::milliseconds timeout) override;
    void close() override { closed_ = true; }

private:
    TunnelResponder& responder_;
    std::function<double()> clock_;
    std::deque<ike::ControlMessage> replies_;
    bool closed_ = false;
};

}  // namespace qtunnel::tunnel
