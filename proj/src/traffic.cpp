#include "qtunnel/traffic.hpp"

#include <poll.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <random>
#include <stdexcept>
#include <thread>

namespace qtunnel::traffic {

namespace {

using SteadyClock = std::chrono::steady_clock;

constexpr std::size_t kStampSize = 12;  // stream id(4) | stream seq(8)

double seconds_since(SteadyClock::time_point start) {
    return std::chrono::duration<double>(SteadyClock::now() - start).count();
}

struct Flow {
    int tunnel_index = 0;
    bool outbound = true;  // initiator -> responder
};

struct Stream {
    int flow = 0;
    double bytes_per_s = 0.0;
    double tokens = 0.0;
    std::uint64_t next_seq = 1;
};

struct Bucket {
    std::uint64_t pkts = 0;
    std::uint64_t bytes = 0;
    std::uint64_t dropped = 0;
    std::vector<std::uint64_t> flow_bytes;
};

}  // namespace

void StreamSetConfig::validate() const {
    if (concurrency < 1) throw std::invalid_argument("concurrency must be >= 1");
    if (packet_size < kStampSize || packet_size > dataplane::kMaxPlaintext) {
        throw std::invalid_argument("packet_size must be in [12, 8192]");
    }
    if (!(rate_mbps > 0)) throw std::invalid_argument("rate_mbps must be > 0");
    if (aggregate_mbps() > max_aggregate_mbps) {
        throw std::invalid_argument("aggregate rate exceeds the configured maximum");
    }
    if (duration < 0) throw std::invalid_argument("duration must be >= 0");
    std::size_t flows = tunnels.size() * (bidirectional ? 2 : 1);
    if (static_cast<std::size_t>(concurrency) < flows) {
        throw std::invalid_argument("concurrency must cover every tunnel direction");
    }
}

StreamRunResult run_stream_set(const StreamSetConfig& cfg, std::vector<TunnelEndpoints> endpoints,
                               const std::function<double()>& clock) {
    cfg.validate();
    if (endpoints.size() != cfg.tunnels.size()) {
        throw std::invalid_argument("one endpoint pair per configured tunnel required");
    }
    StreamRunResult result;
    auto n_seconds = static_cast<std::size_t>(std::ceil(cfg.duration));
    if (n_seconds == 0 || endpoints.empty()) return result;

    std::vector<Flow> flows;
    for (std::size_t t = 0; t < endpoints.size(); ++t) {
        flows.push_back({static_cast<int>(t), true});
        if (cfg.bidirectional) flows.push_back({static_cast<int>(t), false});
    }
    std::vector<int> streams_per_flow(flows.size(), 0);
    std::vector<Stream> streams(static_cast<std::size_t>(cfg.concurrency));
    for (std::size_t s = 0; s < streams.size(); ++s) {
        streams[s].flow = static_cast<int>(s % flows.size());
        ++streams_per_flow[static_cast<std::size_t>(streams[s].flow)];
    }
    double flow_bytes_per_s = cfg.rate_mbps * 1e6 / 8.0 / static_cast<double>(endpoints.size());
    for (auto& s : streams) {
        s.bytes_per_s = flow_bytes_per_s / streams_per_flow[static_cast<std::size_t>(s.flow)];
    }

    // shared pseudo-random payload body; receivers compare against it
    Bytes pool(cfg.packet_size);
    std::mt19937_64 rng(0x5eed);
    for (auto& b : pool) b = static_cast<std::uint8_t>(rng());

    auto make_buckets = [&] {
        std::vector<Bucket> v(n_seconds);
        for (auto& b : v) b.flow_bytes.assign(flows.size(), 0);
        return v;
    };
    std::vector<Bucket> tx = make_buckets();
    std::vector<Bucket> rx = make_buckets();
    DirectTotals totals;
    std::atomic<bool> sending_done{false};

    auto start = SteadyClock::now();
    auto bucket_index = [&](double elapsed) {
        return std::min(n_seconds - 1, static_cast<std::size_t>(std::max(0.0, elapsed)));
    };

    std::thread receiver([&] {
        std::vector<pollfd> fds;
        std::vector<std::pair<std::size_t, bool>> owners;  // endpoint index, receiving side is responder
        for (std::size_t i = 0; i < endpoints.size(); ++i) {
            fds.push_back({endpoints[i].initiator.socket->fd(), POLLIN, 0});
            owners.emplace_back(i, false);
            fds.push_back({endpoints[i].responder.socket->fd(), POLLIN, 0});
            owners.emplace_back(i, true);
        }
        std::vector<std::uint64_t> highest(streams.size(), 0);
        Bytes buf(dataplane::kMaxPlaintext + dataplane::kPacketOverhead + 64);
        auto idle_since = SteadyClock::now();
        for (;;) {
            int rc = ::poll(fds.data(), fds.size(), 10);
            if (rc <= 0) {
                if (sending_done.load() &&
                    (SteadyClock::now() - idle_since > std::chrono::milliseconds(300) ||
                     seconds_since(start) > cfg.duration + 3.0)) {
                    break;
                }
                continue;
            }
            idle_since = SteadyClock::now();
            for (std::size_t k = 0; k < fds.size(); ++k) {
                if (!(fds[k].revents & POLLIN)) continue;
                auto [ep_index, at_responder] = owners[k];
                auto& side = at_responder ? endpoints[ep_index].responder : endpoints[ep_index].initiator;
                // drain what is queued on this socket
                for (int burst = 0; burst < 256; ++burst) {
                    auto len = side.socket->recv(buf, std::chrono::milliseconds(0));
                    if (!len) break;
                    auto& bucket = rx[bucket_index(seconds_since(start))];
                    auto opened = side.table->open(ByteView(buf.data(), *len), clock());
                    if (opened.status != dataplane::OpenStatus::ok) {
                        ++bucket.dropped;
                        ++totals.dropped_rx;
                        continue;
                    }
                    const Bytes& p = opened.plaintext;
                    if (p.size() != cfg.packet_size) {
                        ++totals.payload_errors;
                        continue;
                    }
                    std::uint32_t sid = get_be32(p.data());
                    std::uint64_t seq = get_be64(p.data() + 4);
                    if (sid >= streams.size() ||
                        std::memcmp(p.data() + kStampSize, pool.data() + kStampSize, p.size() - kStampSize) != 0) {
                        ++totals.payload_errors;
                        continue;
                    }
                    if (seq < highest[sid]) ++totals.reordered;
                    highest[sid] = std::max(highest[sid], seq);
                    ++bucket.pkts;
                    bucket.bytes += p.size();
                    bucket.flow_bytes[static_cast<std::size_t>(streams[sid].flow)] += p.size();
                    ++totals.rx_pkts;
                    totals.rx_bytes += p.size();
                }
            }
        }
    });

    Bytes payload = pool;
    Bytes wire;
    auto last = start;
    auto next_tick = start;
    for (;;) {
        auto now = SteadyClock::now();
        double elapsed = std::chrono::duration<double>(now - start).count();
        if (elapsed >= cfg.duration) break;
        double dt = std::chrono::duration<double>(now - last).count();
        last = now;
        auto& bucket = tx[bucket_index(elapsed)];
        for (std::size_t sid = 0; sid < streams.size(); ++sid) {
            auto& s = streams[sid];
            double burst_cap = std::max(2.0 * static_cast<double>(cfg.packet_size), s.bytes_per_s * 0.002);
            s.tokens = std::min(burst_cap, s.tokens + s.bytes_per_s * dt);
            const Flow& flow = flows[static_cast<std::size_t>(s.flow)];
            auto& side = flow.outbound ? endpoints[static_cast<std::size_t>(flow.tunnel_index)].initiator
                                       : endpoints[static_cast<std::size_t>(flow.tunnel_index)].responder;
            while (s.tokens >= static_cast<double>(cfg.packet_size)) {
                s.tokens -= static_cast<double>(cfg.packet_size);
                put_be32(payload.data(), static_cast<std::uint32_t>(sid));
                put_be64(payload.data() + 4, s.next_seq++);
                ++bucket.pkts;
                bucket.bytes += payload.size();
                ++totals.tx_pkts;
                totals.tx_bytes += payload.size();
                bool sent = false;
                if (auto sa = side.table->outbound()) {
                    try {
                        dataplane::seal_into(*sa, payload, clock(), wire);
                        sent = side.socket->send(wire);
                    } catch (const dataplane::DataplaneError&) {
                        sent = false;
                    }
                }
                if (!sent) {
                    ++bucket.dropped;
                    ++totals.dropped_tx;
                }
            }
        }
        next_tick += std::chrono::milliseconds(1);
        if (next_tick < SteadyClock::now()) next_tick = SteadyClock::now();
        std::this_thread::sleep_until(next_tick);
    }
    sending_done = true;
    receiver.join();

    for (std::size_t i = 0; i < n_seconds; ++i) {
        SecondCounters c;
        c.t = static_cast<int>(i);
        c.tx_pkts = tx[i].pkts;
        c.rx_pkts = rx[i].pkts;
        c.dropped_tx = tx[i].dropped;
        c.dropped_rx = rx[i].dropped;
        c.tx_mbps = static_cast<double>(tx[i].bytes) * 8.0 / 1e6;
        c.rx_mbps = static_cast<double>(rx[i].bytes) * 8.0 / 1e6;
        for (std::size_t f = 0; f < flows.size(); ++f) {
            int id = endpoints[static_cast<std::size_t>(flows[f].tunnel_index)].id;
            auto& rate = c.per_tunnel[id];
            double mbps = static_cast<double>(rx[i].flow_bytes[f]) * 8.0 / 1e6;
            (flows[f].outbound ? rate.out_mbps : rate.in_mbps) = mbps;
        }
        result.seconds.push_back(std::move(c));
    }
    result.totals = totals;
    return result;
}

RunReport aggregate_report(const std::vector<SecondCounters>& counters, const KeyPlaneStats& keys) {
    RunReport r;
    r.duration = static_cast<double>(counters.size());
    std::map<int, TunnelAggregate> tunnels;
    for (const auto& c : counters) {
        r.tx_pkts += c.tx_pkts;
        r.rx_pkts += c.rx_pkts;
        r.avg_tx_mbps += c.tx_mbps;
        r.avg_rx_mbps += c.rx_mbps;
        for (const auto& [id, rate] : c.per_tunnel) {
            auto& agg = tunnels[id];
            agg.id = id;
            agg.avg_in_mbps += rate.in_mbps;
            agg.avg_out_mbps += rate.out_mbps;
        }
    }
    r.dropped = r.tx_pkts >= r.rx_pkts ? r.tx_pkts - r.rx_pkts : 0;
    r.drop_rate = r.tx_pkts > 0 ? static_cast<double>(r.dropped) / static_cast<double>(r.tx_pkts) : 0.0;
    if (!counters.empty()) {
        r.avg_tx_mbps /= r.duration;
        r.avg_rx_mbps /= r.duration;
    }
    for (auto& [id, agg] : tunnels) {
        if (!counters.empty()) {
            agg.avg_in_mbps /= r.duration;
            agg.avg_out_mbps /= r.duration;
        }
        r.per_tunnel.push_back(agg);
    }
    r.keys_generated = keys.keys_generated;
    r.keys_consumed = keys.keys_consumed;
    r.consumption_ratio = keys.keys_generated > 0 ? static_cast<double>(keys.keys_consumed) /
                                                        static_cast<double>(keys.keys_generated)
                                                  : 0.0;
    return r;
}

double bytes_per_key(double rate_bps, double interval_s) {
    if (rate_bps < 0 || interval_s < 0) throw std::invalid_argument("rate and interval must be >= 0");
    return rate_bps * interval_s / 8.0;
}

void to_json(nlohmann::json& j, const RunReport& r) {
    nlohmann::json tunnels = nlohmann::json::array();
    for (const auto& t : r.per_tunnel) {
        tunnels.push_back({{"id", t.id}, {"avg_in_mbps", t.avg_in_mbps}, {"avg_out_mbps", t.avg_out_mbps}});
    }
    j = nlohmann::json{{"duration", r.duration},
                       {"totals",
                        {{"tx_pkts", r.tx_pkts},
                         {"rx_pkts", r.rx_pkts},
                         {"dropped", r.dropped},
                         {"drop_rate", r.drop_rate},
                         {"avg_tx_mbps", r.avg_tx_mbps},
                         {"avg_rx_mbps", r.avg_rx_mbps}}},
                       {"per_tunnel", tunnels},
                       {"keys_generated", r.keys_generated},
                       {"keys_consumed", r.keys_consumed},
                       {"consumption_ratio", r.consumption_ratio}};
}

void to_json(nlohmann::json& j, const SecondCounters& c) {
    j = nlohmann::json{{"t", c.t},
                       {"tx_pkts", c.tx_pkts},
                       {"rx_pkts", c.rx_pkts},
                       {"dropped_tx", c.dropped_tx},
                       {"dropped_rx", c.dropped_rx},
                       {"tx_mbps", c.tx_mbps},
                       {"rx_mbps", c.rx_mbps}};
}

void write_counters_csv(std::ostream& out, const std::vector<SecondCounters>& counters) {
    out << "t,tx_pkts,rx_pkts,dropped_tx,dropped_rx,tx_mbps,rx_mbps\n";
    for (const auto& c : counters) {
        out << c.t << ',' << c.tx_pkts << ',' << c.rx_pkts << ',' << c.dropped_tx << ',' << c.dropped_rx << ','
            << c.tx_mbps << ',' << c.rx_mbps << '\n';
    }
}

}  // namespace qtunnel::traffic
