#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <future>
#include <memory>
#include <set>
#include <thread>

#include "qtunnel/control.hpp"
#include "qtunnel/crypto.hpp"
#include "qtunnel/kms_http.hpp"
#include "qtunnel/net.hpp"
#include "qtunnel/scenario.hpp"

namespace qtunnel::scenario {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

const std::string kSaeA = "fw-a";
const std::string kSaeB = "fw-b";

std::pair<kms::KmeConfig, kms::KmeConfig> kme_configs(std::size_t max_keys, std::size_t per_request,
                                                      const std::string& host, std::uint16_t port_a,
                                                      std::uint16_t port_b, const std::string& token_a,
                                                      const std::string& token_b) {
    kms::KmeConfig a;
    a.kme_id = "kme-a";
    a.peer_kme_id = "kme-b";
    a.registered_sae_ids = {kSaeA};
    a.max_key_count = max_keys;
    a.max_keys_per_request = per_request;
    a.listen_host = host;
    a.listen_port = port_a;
    a.sae_tokens = {{kSaeA, token_a}};
    kms::KmeConfig b = a;
    b.kme_id = "kme-b";
    b.peer_kme_id = "kme-a";
    b.registered_sae_ids = {kSaeB};
    b.listen_port = port_b;
    b.sae_tokens = {{kSaeB, token_b}};
    return {a, b};
}

std::pair<ike::IkeConfig, ike::IkeConfig> ike_configs(int tunnel, ByteView psk) {
    ike::IkeConfig i{"fw-a.tunnel" + std::to_string(tunnel), Bytes(psk.begin(), psk.end()),
                     crypto::DhGroup::curve25519};
    ike::IkeConfig r{"fw-b.tunnel" + std::to_string(tunnel), Bytes(psk.begin(), psk.end()),
                     crypto::DhGroup::curve25519};
    return {i, r};
}

struct TunnelRuntime {
    int id = 0;
    dataplane::SaTable table_i;
    dataplane::SaTable table_r;
    net::UdpSocket udp_i;
    net::UdpSocket udp_r;
    std::unique_ptr<kms::HttpKmsClient> kms_i;
    std::unique_ptr<kms::HttpKmsClient> kms_r;
    std::unique_ptr<ike::TcpControlChannel> ch_i;
    std::unique_ptr<ike::TcpControlChannel> ch_r;
    std::unique_ptr<tunnel::TunnelInitiator> initiator;
    std::unique_ptr<tunnel::TunnelResponder> responder;
    std::thread responder_thread;
};

json event_json(const tunnel::RekeyEvent& e) {
    json j = {{"t", e.t}, {"ok", e.ok}, {"initial", e.initial}, {"spi_i", e.spi_i}, {"spi_r", e.spi_r}};
    if (!e.qkd_key_id.empty()) j["qkd_key_id"] = e.qkd_key_id;
    if (!e.error.empty()) j["error"] = e.error;
    return j;
}

void add(std::vector<Assertion>& list, std::string name, bool passed, std::string detail) {
    list.push_back({std::move(name), passed, std::move(detail)});
}

}  // namespace

ScenarioOutcome run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    ScenarioOutcome out;

    std::error_code ec;
    std::filesystem::create_directories(cfg.report_dir, ec);
    if (ec) {
        out.exit_code = kExitStartup;
        out.error = "cannot create report directory " + cfg.report_dir.string() + ": " + ec.message();
        return out;
    }

    const auto policy = cfg.rekey_policy();
    const std::string token_a = to_hex(crypto::random_bytes(16));
    const std::string token_b = to_hex(crypto::random_bytes(16));
    auto [ka, kb] = kme_configs(cfg.kms_max_key_count, cfg.kms_max_keys_per_request, cfg.host, cfg.kme_a_port,
                                cfg.kme_b_port, token_a, token_b);
    kms::KeyPlane plane(ka, kb);
    qkd::QkdLink link(cfg.link);

    for (int s = 0; s < static_cast<int>(std::ceil(cfg.link_warmup_s)); ++s) {
        auto step = link.advance(1.0);
        plane.ingest(step.batch);
    }
    const auto blocks_before = link.blocks_emitted();
    const auto consumed_before = plane.counters(kms::Side::a).consumed;

    kms::KmeServer server_a(plane, kms::Side::a);
    kms::KmeServer server_b(plane, kms::Side::b);
    std::vector<std::unique_ptr<TunnelRuntime>> tunnels;
    std::atomic<bool> stop_control{false};

    auto teardown = [&] {
        stop_control = true;
        for (auto& t : tunnels) {
            if (t->ch_i) t->ch_i->close();
            if (t->ch_r) t->ch_r->close();
            if (t->responder_thread.joinable()) t->responder_thread.join();
        }
        server_a.stop();
        server_b.stop();
    };

    const auto t0 = Clock::now();
    auto clock = [t0] { return std::chrono::duration<double>(Clock::now() - t0).count(); };

    try {
        server_a.start();
        server_b.start();
        const Bytes psk = crypto::random_bytes(32);
        for (int i = 0; i < cfg.tunnel_count; ++i) {
            auto rt = std::make_unique<TunnelRuntime>();
            rt->id = i;
            auto [ci, cr] = ike_configs(i, psk);
            rt->kms_i = std::make_unique<kms::HttpKmsClient>(cfg.host, server_a.port(), kSaeA, token_a);
            rt->kms_r = std::make_unique<kms::HttpKmsClient>(cfg.host, server_b.port(), kSaeB, token_b);

            auto listener = net::TcpListener::bind({cfg.host, 0});
            std::promise<void> ready;
            auto ready_future = ready.get_future();
            TunnelRuntime* raw = rt.get();
            raw->responder_thread = std::thread([raw, &listener, cr, policy, clock, &stop_control,
                                                 ready = std::move(ready)]() mutable {
                try {
                    auto stream = listener.accept(std::chrono::seconds(5));
                    if (!stream) throw net::NetError("control channel accept timed out");
                    raw->ch_r = std::make_unique<ike::TcpControlChannel>(std::move(*stream));
                    auto session = ike::run_responder_handshake(*raw->ch_r, cr);
                    raw->responder = std::make_unique<tunnel::TunnelResponder>(
                        std::move(session), *raw->kms_r, kSaeA, raw->table_r, policy);
                    ready.set_value();
                } catch (...) {
                    ready.set_exception(std::current_exception());
                    return;
                }
                raw->responder->serve(*raw->ch_r, clock, stop_control);
            });
            tunnels.push_back(std::move(rt));

            raw->ch_i = std::make_unique<ike::TcpControlChannel>(
                net::TcpStream::connect({cfg.host, listener.port()}));
            auto session = ike::run_initiator_handshake(*raw->ch_i, ci);
            ready_future.get();
            raw->initiator = std::make_unique<tunnel::TunnelInitiator>(std::move(session), *raw->kms_i, kSaeB,
                                                                       *raw->ch_i, raw->table_i, policy);
            raw->initiator->create_initial(clock());

            raw->udp_i = net::UdpSocket::bind({cfg.host, 0});
            raw->udp_r = net::UdpSocket::bind({cfg.host, 0});
            raw->udp_i.connect({cfg.host, raw->udp_r.port()});
            raw->udp_r.connect({cfg.host, raw->udp_i.port()});
        }
    } catch (const std::exception& e) {
        teardown();
        out.exit_code = kExitStartup;
        out.error = std::string("startup failed: ") + e.what();
        return out;
    }

    // Rekey timers and the traffic window both start once every tunnel is up.
    const double run_start = clock();
    std::vector<qkd::TelemetrySample> telemetry;
    std::optional<double> restart_at;
    std::atomic<bool> stop_link{false};

    std::thread link_thread([&] {
        int tick = 0;
        bool down = false;
        while (!stop_link) {
            auto next = t0 + std::chrono::duration_cast<Clock::duration>(
                                 std::chrono::duration<double>(run_start + tick + 1));
            while (!stop_link && Clock::now() < next) std::this_thread::sleep_for(std::chrono::milliseconds(20));
            if (stop_link) break;
            ++tick;
            auto step = link.advance(1.0);
            plane.ingest(step.batch);
            step.sample.t = tick;
            telemetry.push_back(step.sample);
            if (cfg.outage) {
                double rel = clock() - run_start;
                if (!down && !restart_at && rel >= cfg.outage->start_s) {
                    server_a.stop();
                    server_b.stop();
                    down = true;
                }
                if (down && rel >= cfg.outage->end_s) {
                    try {
                        server_a.start();
                        server_b.start();
                    } catch (const std::exception&) {
                    }
                    restart_at = clock();
                    down = false;
                }
            }
        }
    });

    std::thread control_thread([&] {
        while (!stop_control) {
            for (auto& t : tunnels) t->initiator->poll(clock());
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    });

    std::vector<traffic::TunnelEndpoints> endpoints;
    for (auto& t : tunnels) {
        endpoints.push_back({t->id, {&t->table_i, &t->udp_i}, {&t->table_r, &t->udp_r}});
    }
    auto traffic_cfg = cfg.traffic;
    traffic_cfg.duration = cfg.duration_s;
    auto stream = traffic::run_stream_set(traffic_cfg, endpoints, clock);

    stop_control = true;
    control_thread.join();
    stop_link = true;
    link_thread.join();
    teardown();

    // Collect results.
    out.counters = std::move(stream.seconds);
    out.direct_totals = stream.totals;
    const std::uint64_t generated = link.blocks_emitted() - blocks_before;
    const std::uint64_t consumed = plane.counters(kms::Side::a).consumed - consumed_before;
    out.report = traffic::aggregate_report(out.counters, {generated, consumed});

    std::set<std::string> key_ids;
    std::size_t successful_children = 0;
    bool keys_distinct = true;
    bool responder_agrees = true;
    const int min_rekeys = static_cast<int>(std::ceil(static_cast<double>(cfg.duration_s) / cfg.rekey_interval_s)) - 1;
    int fewest_rekeys = std::numeric_limits<int>::max();
    std::size_t failed_in_outage = 0;
    for (auto& t : tunnels) {
        auto events = t->initiator->events();
        int rekeys = 0;
        bool had_outage_failure = false;
        std::optional<double> first_after_restart;
        for (const auto& e : events) {
            if (!e.ok) {
                if (cfg.outage && e.t - run_start >= cfg.outage->start_s) {
                    ++failed_in_outage;
                    had_outage_failure = true;
                }
                continue;
            }
            ++successful_children;
            if (!e.initial) ++rekeys;
            if (!key_ids.insert(e.qkd_key_id).second) keys_distinct = false;
            if (!e.initial && restart_at && e.t >= *restart_at && !first_after_restart) {
                first_after_restart = e.t - *restart_at;
            }
        }
        if (had_outage_failure) {
            double r = first_after_restart.value_or(std::numeric_limits<double>::infinity());
            out.outage_recovery_s = std::max(out.outage_recovery_s.value_or(0.0), r);
        }
        fewest_rekeys = std::min(fewest_rekeys, rekeys);
        out.successful_rekeys += static_cast<std::size_t>(rekeys);
        auto ih = t->initiator->history();
        auto rh = t->responder->history();
        if (ih.size() != rh.size()) {
            responder_agrees = false;
        } else {
            for (std::size_t k = 0; k < ih.size(); ++k) {
                if (ih[k].keys != rh[k].keys || ih[k].spi_i != rh[k].spi_i || ih[k].spi_r != rh[k].spi_r) {
                    responder_agrees = false;
                }
            }
        }
        out.rekey_events.push_back(std::move(events));
        for (auto& a : t->initiator->alarms()) out.alarms.push_back(a);
    }

    auto& as = out.assertions;
    add(as, "zero_drops", out.report.dropped == 0 && out.direct_totals.dropped_tx == 0 &&
                              out.direct_totals.dropped_rx == 0 && out.direct_totals.payload_errors == 0,
        "dropped=" + std::to_string(out.report.dropped) + " payload_errors=" +
            std::to_string(out.direct_totals.payload_errors));
    add(as, "rekey_count", fewest_rekeys >= min_rekeys,
        "min per tunnel=" + std::to_string(fewest_rekeys) + " expected>=" + std::to_string(min_rekeys));
    add(as, "distinct_key_ids", keys_distinct, std::to_string(key_ids.size()) + " distinct ids");
    add(as, "one_key_per_child", consumed == successful_children,
        "consumed=" + std::to_string(consumed) + " children=" + std::to_string(successful_children));
    add(as, "peers_agree", responder_agrees, "initiator and responder derived identical Child SAs");
    if (cfg.outage) {
        add(as, "outage_alarm", !out.alarms.empty(), std::to_string(out.alarms.size()) + " alarms");
        if (failed_in_outage > 0) {
            bool ok = out.outage_recovery_s && *out.outage_recovery_s <= policy.grace + 0.25;
            add(as, "outage_recovery", ok, "slowest tunnel recovered " + std::to_string(*out.outage_recovery_s) +
                                               " s after restart");
        }
    }
    bool all_ok = std::all_of(as.begin(), as.end(), [](const Assertion& a) { return a.passed; });
    out.exit_code = all_ok ? kExitOk : kExitAssertion;

    json report = out.report;
    report["scenario"] = to_string(cfg.scenario);
    report["tunnel_count"] = cfg.tunnel_count;
    report["rekey_interval_s"] = cfg.rekey_interval_s;
    report["rekey_grace_s"] = cfg.rekey_grace_s;
    report["successful_rekeys"] = out.successful_rekeys;
    json jas = json::array();
    for (const auto& a : as) jas.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
    report["assertions"] = jas;
    json jev = json::array();
    for (std::size_t i = 0; i < out.rekey_events.size(); ++i) {
        json list = json::array();
        for (const auto& e : out.rekey_events[i]) {
            auto je = event_json(e);
            je["t"] = e.t - run_start;
            list.push_back(je);
        }
        jev.push_back({{"tunnel", i}, {"events", list}});
    }
    report["rekey_events"] = jev;
    json jal = json::array();
    for (const auto& a : out.alarms) jal.push_back({{"t", a.t - run_start}, {"message", a.message}});
    report["alarms"] = jal;
    if (out.outage_recovery_s && std::isfinite(*out.outage_recovery_s)) report["outage_recovery_s"] = *out.outage_recovery_s;
    out.report_json = report;

    std::ofstream(cfg.report_dir / "report.json") << report.dump(2) << '\n';
    std::ofstream counters_csv(cfg.report_dir / "counters.csv");
    traffic::write_counters_csv(counters_csv, out.counters);
    std::ofstream telemetry_csv(cfg.report_dir / "telemetry.csv");
    qkd::write_telemetry_csv_header(telemetry_csv);
    for (const auto& s : telemetry) qkd::write_telemetry_csv_row(telemetry_csv, s);
    return out;
}

KeyBudgetResult simulate_key_budget(const KeyBudgetConfig& cfg) {
    if (cfg.tunnels < 1) throw std::invalid_argument("tunnels must be >= 1");
    ike::RekeyPolicy policy{cfg.rekey_interval_s, std::min(5.0, cfg.rekey_interval_s / 4.0)};
    policy.validate();

    auto [ka, kb] = kme_configs(1'000'000, 128, "127.0.0.1", 0, 0, "a", "b");
    kms::KeyPlane plane(ka, kb);
    qkd::QkdLink link(cfg.link);
    for (int s = 0; s < static_cast<int>(std::ceil(cfg.warmup_s)); ++s) plane.ingest(link.advance(1.0).batch);

    double now = 0.0;
    auto clock = [&now] { return now; };
    const Bytes psk(32, 0x5a);

    struct Sim {
        dataplane::SaTable ti, tr;
        std::unique_ptr<kms::LocalKmsClient> kms_i, kms_r;
        std::unique_ptr<tunnel::TunnelResponder> resp;
        std::unique_ptr<tunnel::InlineResponderChannel> channel;
        std::unique_ptr<tunnel::TunnelInitiator> ini;
    };
    std::vector<std::unique_ptr<Sim>> sims;
    for (int i = 0; i < cfg.tunnels; ++i) {
        auto s = std::make_unique<Sim>();
        auto [ci, cr] = ike_configs(i, psk);
        auto [si, sr] = ike::establish_ike_sa(ci, cr);
        s->kms_i = std::make_unique<kms::LocalKmsClient>(plane, kms::Side::a, kSaeA);
        s->kms_r = std::make_unique<kms::LocalKmsClient>(plane, kms::Side::b, kSaeB);
        s->resp = std::make_unique<tunnel::TunnelResponder>(std::move(sr), *s->kms_r, kSaeA, s->tr, policy);
        s->channel = std::make_unique<tunnel::InlineResponderChannel>(*s->resp, clock);
        s->ini = std::make_unique<tunnel::TunnelInitiator>(std::move(si), *s->kms_i, kSaeB, *s->channel, s->ti,
                                                           policy);
        s->ini->create_initial(now);
        sims.push_back(std::move(s));
    }

    const auto blocks_before = link.blocks_emitted();
    const auto consumed_before = plane.counters(kms::Side::a).consumed;
    const int steps = static_cast<int>(std::llround(cfg.window_s));
    for (int k = 1; k <= steps; ++k) {
        now = k;
        plane.ingest(link.advance(1.0).batch);
        for (auto& s : sims) s->ini->poll(now);
    }

    KeyBudgetResult r;
    r.keys_generated = link.blocks_emitted() - blocks_before;
    r.keys_consumed = plane.counters(kms::Side::a).consumed - consumed_before;
    r.consumption_ratio =
        r.keys_generated ? static_cast<double>(r.keys_consumed) / static_cast<double>(r.keys_generated) : 0.0;
    for (auto& s : sims) {
        r.initiator_children.push_back(s->ini->history());
        r.responder_children.push_back(s->resp->history());
    }
    return r;
}

json kdf_vectors() {
    auto seq = [](std::size_t n, std::uint8_t start) {
        Bytes b(n);
        for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(start + i);
        return b;
    };
    const Bytes ni = seq(32, 0x00);
    const Bytes nr = seq(32, 0x20);
    const Bytes g_ir = seq(32, 0x40);
    const Bytes spi_i = seq(8, 0x60);
    const Bytes spi_r = seq(8, 0x68);
    const Bytes qkd_key = seq(32, 0x80);

    auto skeyseed = kdf::derive_skeyseed(ni, nr, g_ir);
    auto ike_keys = kdf::derive_ike_keys(skeyseed, ni, nr, spi_i, spi_r);
    auto keymat = kdf::derive_child_keymat(ike_keys.sk_d, qkd_key, ni, nr);
    auto child = kdf::split_keymat(keymat);

    json j;
    j["inputs"] = {{"ni", to_hex(ni)},       {"nr", to_hex(nr)},       {"g_ir", to_hex(g_ir)},
                   {"spi_i", to_hex(spi_i)}, {"spi_r", to_hex(spi_r)}, {"qkd_key", to_hex(qkd_key)}};
    j["skeyseed"] = to_hex(skeyseed);
    j["ike_keys"] = {{"sk_d", to_hex(ike_keys.sk_d)},   {"sk_ai", to_hex(ike_keys.sk_ai)},
                     {"sk_ar", to_hex(ike_keys.sk_ar)}, {"sk_ei", to_hex(ike_keys.sk_ei)},
                     {"sk_er", to_hex(ike_keys.sk_er)}, {"sk_pi", to_hex(ike_keys.sk_pi)},
                     {"sk_pr", to_hex(ike_keys.sk_pr)}};
    j["keymat"] = to_hex(keymat);
    j["child"] = {{"ek_i2r", to_hex(child.ek_i2r)},
                  {"salt_i2r", to_hex(child.salt_i2r)},
                  {"ek_r2i", to_hex(child.ek_r2i)},
                  {"salt_r2i", to_hex(child.salt_r2i)}};
    json plus = json::array();
    for (std::size_t len : {1u, 32u, 33u, 64u, 72u, 100u}) {
        plus.push_back({{"key", to_hex(skeyseed)},
                        {"seed", to_hex(concat(ni, nr))},
                        {"length", len},
                        {"output", to_hex(kdf::prf_plus(skeyseed, concat(ni, nr), len))}});
    }
    j["prf_plus"] = plus;
    return j;
}

}  // namespace qtunnel::scenario
