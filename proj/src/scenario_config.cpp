#include <fstream>
#include <set>
#include <sstream>

#include "qtunnel/scenario.hpp"

namespace qtunnel::scenario {

namespace {

using nlohmann::json;

const char* kind_names[] = {"single_tunnel", "multi_tunnel", "rekey_storm", "kms_outage"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
    if (!obj.is_object()) throw ConfigError("field '" + path + "': expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError("unknown field '" + (path.empty() ? key : path + "." + key) + "'");
        }
    }
}

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

template <typename T>
std::optional<T> get_opt(const json& obj, const std::string& key, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) return std::nullopt;
    const std::string field = join(path, key);
    if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("field '" + field + "': expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("field '" + field + "': expected an integer");
        auto v = it->get<std::int64_t>();
        if constexpr (std::is_unsigned_v<T>) {
            if (v < 0) throw ConfigError("field '" + field + "': must be >= 0");
        }
        if (v < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
            static_cast<std::uint64_t>(std::max<std::int64_t>(v, 0)) >
                static_cast<std::uint64_t>(std::numeric_limits<T>::max())) {
            throw ConfigError("field '" + field + "': out of range");
        }
        return static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("field '" + field + "': expected a number");
    } else {
        if (!it->is_string()) throw ConfigError("field '" + field + "': expected a string");
    }
    return it->get<T>();
}

std::size_t line_of(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

const char* to_string(ScenarioKind kind) { return kind_names[static_cast<int>(kind)]; }

void ScenarioConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (tunnel_count < 1) fail("field 'tunnel_count': must be >= 1");
    if (scenario == ScenarioKind::single_tunnel && tunnel_count != 1) {
        fail("field 'tunnel_count': single_tunnel requires exactly 1 tunnel");
    }
    if (!(rekey_interval_s > rekey_grace_s)) fail("field 'rekey_interval_s': must be > rekey_grace_s");
    if (!(rekey_grace_s > 0)) fail("field 'rekey_grace_s': must be > 0");
    if (duration_s < 1) fail("field 'duration_s': must be >= 1");
    if (duration_s < rekey_interval_s) fail("field 'duration_s': must be >= rekey_interval_s");
    if (link_warmup_s < 0) fail("field 'link_warmup_s': must be >= 0");
    try {
        link.validate();
    } catch (const std::invalid_argument& e) {
        fail(std::string("field 'link': ") + e.what());
    }
    try {
        traffic.validate();
    } catch (const std::invalid_argument& e) {
        fail(std::string("field 'traffic': ") + e.what());
    }
    if (static_cast<int>(traffic.tunnels.size()) != tunnel_count) {
        fail("field 'traffic': tunnel list does not match tunnel_count");
    }
    if (kms_max_key_count == 0) fail("field 'kms.max_key_count': must be > 0");
    if (kms_max_keys_per_request == 0) fail("field 'kms.max_keys_per_request': must be > 0");
    if (outage) {
        if (scenario != ScenarioKind::kms_outage) fail("field 'outage': only valid for kms_outage");
        if (!(outage->start_s >= 0 && outage->start_s < outage->end_s && outage->end_s < duration_s)) {
            fail("field 'outage': require 0 <= start_s < end_s < duration_s");
        }
    } else if (scenario == ScenarioKind::kms_outage) {
        fail("field 'outage': required for kms_outage");
    }
}

ScenarioConfig parse_config_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
    }
    reject_unknown(doc,
                   {"scenario", "tunnel_count", "rekey_interval_s", "rekey_grace_s", "duration_s", "link",
                    "link_warmup_s", "traffic", "kms", "endpoints", "outage", "report_dir"},
                   "");

    ScenarioConfig cfg;
    auto kind = get_opt<std::string>(doc, "scenario", "");
    if (!kind) throw ConfigError("field 'scenario': required");
    bool known = false;
    for (int i = 0; i < 4; ++i) {
        if (*kind == kind_names[i]) {
            cfg.scenario = static_cast<ScenarioKind>(i);
            known = true;
        }
    }
    if (!known) throw ConfigError("field 'scenario': unknown scenario '" + *kind + "'");

    auto duration = get_opt<int>(doc, "duration_s", "");
    if (!duration) throw ConfigError("field 'duration_s': required");
    cfg.duration_s = *duration;

    int default_tunnels = cfg.scenario == ScenarioKind::multi_tunnel ? 12 : 1;
    cfg.tunnel_count = get_opt<int>(doc, "tunnel_count", "").value_or(default_tunnels);
    int default_interval = cfg.scenario == ScenarioKind::rekey_storm ? 1 : 120;
    cfg.rekey_interval_s = get_opt<int>(doc, "rekey_interval_s", "").value_or(default_interval);
    cfg.rekey_grace_s = get_opt<double>(doc, "rekey_grace_s", "")
                            .value_or(std::min(5.0, static_cast<double>(cfg.rekey_interval_s) / 4.0));
    cfg.link_warmup_s = get_opt<double>(doc, "link_warmup_s", "").value_or(cfg.link_warmup_s);
    if (auto dir = get_opt<std::string>(doc, "report_dir", "")) cfg.report_dir = *dir;

    if (auto it = doc.find("link"); it != doc.end()) {
        reject_unknown(*it,
                       {"mean_skr_bps", "qber_mean", "visibility_mean", "skr_jitter_rel", "qber_abort_threshold",
                        "key_block_bits", "seed"},
                       "link");
        auto& l = cfg.link;
        l.mean_skr_bps = get_opt<double>(*it, "mean_skr_bps", "link").value_or(l.mean_skr_bps);
        l.qber_mean = get_opt<double>(*it, "qber_mean", "link").value_or(l.qber_mean);
        l.visibility_mean = get_opt<double>(*it, "visibility_mean", "link").value_or(l.visibility_mean);
        l.skr_jitter_rel = get_opt<double>(*it, "skr_jitter_rel", "link").value_or(l.skr_jitter_rel);
        l.qber_abort_threshold =
            get_opt<double>(*it, "qber_abort_threshold", "link").value_or(l.qber_abort_threshold);
        l.key_block_bits = get_opt<int>(*it, "key_block_bits", "link").value_or(l.key_block_bits);
        l.seed = get_opt<std::uint64_t>(*it, "seed", "link").value_or(l.seed);
    }

    auto& t = cfg.traffic;
    t.concurrency = std::max(16, 2 * cfg.tunnel_count);
    if (auto it = doc.find("traffic"); it != doc.end()) {
        reject_unknown(*it, {"concurrency", "packet_size", "rate_mbps", "bidirectional", "max_aggregate_mbps"},
                       "traffic");
        t.concurrency = get_opt<int>(*it, "concurrency", "traffic").value_or(t.concurrency);
        t.packet_size = get_opt<std::size_t>(*it, "packet_size", "traffic").value_or(t.packet_size);
        t.rate_mbps = get_opt<double>(*it, "rate_mbps", "traffic").value_or(t.rate_mbps);
        t.bidirectional = get_opt<bool>(*it, "bidirectional", "traffic").value_or(t.bidirectional);
        t.max_aggregate_mbps =
            get_opt<double>(*it, "max_aggregate_mbps", "traffic").value_or(t.max_aggregate_mbps);
    }
    t.duration = cfg.duration_s;
    t.tunnels.clear();
    for (int i = 0; i < cfg.tunnel_count; ++i) t.tunnels.push_back(i);

    if (auto it = doc.find("kms"); it != doc.end()) {
        reject_unknown(*it, {"max_key_count", "max_keys_per_request"}, "kms");
        cfg.kms_max_key_count = get_opt<std::size_t>(*it, "max_key_count", "kms").value_or(cfg.kms_max_key_count);
        cfg.kms_max_keys_per_request =
            get_opt<std::size_t>(*it, "max_keys_per_request", "kms").value_or(cfg.kms_max_keys_per_request);
    }

    if (auto it = doc.find("endpoints"); it != doc.end()) {
        reject_unknown(*it, {"host", "kme_a_port", "kme_b_port"}, "endpoints");
        cfg.host = get_opt<std::string>(*it, "host", "endpoints").value_or(cfg.host);
        cfg.kme_a_port = get_opt<std::uint16_t>(*it, "kme_a_port", "endpoints").value_or(cfg.kme_a_port);
        cfg.kme_b_port = get_opt<std::uint16_t>(*it, "kme_b_port", "endpoints").value_or(cfg.kme_b_port);
    }

    if (auto it = doc.find("outage"); it != doc.end()) {
        reject_unknown(*it, {"start_s", "end_s"}, "outage");
        OutageWindow w;
        w.start_s = get_opt<double>(*it, "start_s", "outage").value_or(w.start_s);
        w.end_s = get_opt<double>(*it, "end_s", "outage").value_or(w.end_s);
        cfg.outage = w;
    } else if (cfg.scenario == ScenarioKind::kms_outage) {
        cfg.outage = OutageWindow{};
    }

    cfg.validate();
    return cfg;
}

ScenarioConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace qtunnel::scenario
