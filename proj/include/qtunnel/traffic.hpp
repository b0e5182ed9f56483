#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtunnel/dataplane.hpp"
#include "qtunnel/net.hpp"

namespace qtunnel::traffic {

struct StreamSetConfig {
    int concurrency = 16;           // logical UDP streams, spread over tunnels and directions
    std::size_t packet_size = 1400; // plaintext bytes per packet
    double rate_mbps = 100.0;       // per direction, summed over all tunnels
    double duration = 10.0;         // seconds
    std::vector<int> tunnels;
    bool bidirectional = true;
    double max_aggregate_mbps = 500.0;

    void validate() const;
    double aggregate_mbps() const { return rate_mbps * (bidirectional ? 2 : 1); }
};

struct TunnelRate {
    double in_mbps = 0.0;   // responder -> initiator, received
    double out_mbps = 0.0;  // initiator -> responder, received

    bool operator==(const TunnelRate&) const = default;
};

struct SecondCounters {
    int t = 0;
    std::uint64_t tx_pkts = 0;
    std::uint64_t rx_pkts = 0;
    std::uint64_t dropped_tx = 0;
    std::uint64_t dropped_rx = 0;
    double tx_mbps = 0.0;
    double rx_mbps = 0.0;
    std::map<int, TunnelRate> per_tunnel;

    bool operator==(const SecondCounters&) const = default;
};

// One side of a tunnel as seen by the traffic harness.
struct SideEndpoint {
    dataplane::SaTable* table = nullptr;
    net::UdpSocket* socket = nullptr;  // connected to the peer side
};

struct TunnelEndpoints {
    int id = 0;
    SideEndpoint initiator;
    SideEndpoint responder;
};

// Totals kept independently of the per-second buckets.
struct DirectTotals {
    std::uint64_t tx_pkts = 0;
    std::uint64_t rx_pkts = 0;
    std::uint64_t tx_bytes = 0;
    std::uint64_t rx_bytes = 0;
    std::uint64_t dropped_tx = 0;
    std::uint64_t dropped_rx = 0;
    std::uint64_t reordered = 0;
    std::uint64_t payload_errors = 0;
};

struct StreamRunResult {
    std::vector<SecondCounters> seconds;
    DirectTotals totals;
};

// Paced UDP traffic through the tunnels. Payloads are stamped with
// stream id and per-stream sequence number. `clock` is the SA clock in
// seconds (passed to seal/open). Blocks for duration plus drain time.
StreamRunResult run_stream_set(const StreamSetConfig& cfg, std::vector<TunnelEndpoints> endpoints,
                               const std::function<double()>& clock);

struct KeyPlaneStats {
    std::uint64_t keys_generated = 0;
    std::uint64_t keys_consumed = 0;
};

struct TunnelAggregate {
    int id = 0;
    std::uint64_t out_pkts = 0;
    std::uint64_t in_pkts = 0;
    double avg_in_mbps = 0.0;
    double avg_out_mbps = 0.0;

    bool operator==(const TunnelAggregate&) const = default;
};

struct RunReport {
    double duration = 0.0;
    std::uint64_t tx_pkts = 0;
    std::uint64_t rx_pkts = 0;
    std::uint64_t dropped = 0;
    double drop_rate = 0.0;
    double avg_tx_mbps = 0.0;
    double avg_rx_mbps = 0.0;
    std::vector<TunnelAggregate> per_tunnel;
    std::uint64_t keys_generated = 0;
    std::uint64_t keys_consumed = 0;
    double consumption_ratio = 0.0;

    bool operator==(const RunReport&) const = default;
};

RunReport aggregate_report(const std::vector<SecondCounters>& counters, const KeyPlaneStats& keys);

// Bytes protected by one key at rate_bps for interval_s seconds.
double bytes_per_key(double rate_bps, double interval_s);

void to_json(nlohmann::json& j, const RunReport& r);
void to_json(nlohmann::json& j, const SecondCounters& c);

// Header `t,tx_pkts,rx_pkts,dropped_tx,dropped_rx,tx_mbps,rx_mbps`.
void write_counters_csv(std::ostream& out, const std::vector<SecondCounters>& counters);

}  // namespace qtunnel::traffic
