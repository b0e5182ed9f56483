#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtunnel/kdf.hpp"
#include "qtunnel/qkd_link.hpp"
#include "qtunnel/rekey.hpp"
#include "qtunnel/traffic.hpp"
#include "qtunnel/tunnel.hpp"

namespace qtunnel::scenario {

enum class ScenarioKind { single_tunnel, multi_tunnel, rekey_storm, kms_outage };

const char* to_string(ScenarioKind kind);

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OutageWindow {
    double start_s = 100.0;
    double end_s = 130.0;
};

struct ScenarioConfig {
    ScenarioKind scenario = ScenarioKind::single_tunnel;
    int tunnel_count = 1;
    int rekey_interval_s = 120;
    double rekey_grace_s = 5.0;
    int duration_s = 0;
    qkd::LinkParams link;
    double link_warmup_s = 10.0;
    traffic::StreamSetConfig traffic;
    std::size_t kms_max_key_count = 100000;
    std::size_t kms_max_keys_per_request = 128;
    std::string host = "127.0.0.1";
    std::uint16_t kme_a_port = 0;
    std::uint16_t kme_b_port = 0;
    std::optional<OutageWindow> outage;
    std::filesystem::path report_dir = "reports";

    ike::RekeyPolicy rekey_policy() const {
        return {static_cast<double>(rekey_interval_s), rekey_grace_s};
    }

    // Throws ConfigError naming the offending field.
    void validate() const;
};

// Strict JSON parse: unknown fields are rejected, defaults filled in per
// scenario. Errors name the field (and line for syntax errors).
ScenarioConfig parse_config_text(const std::string& text);
ScenarioConfig parse_config(const std::filesystem::path& path);

struct Assertion {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ScenarioOutcome {
    int exit_code = 0;  // 0 ok, 1 assertion failure, 3 startup failure
    traffic::RunReport report;
    traffic::DirectTotals direct_totals;
    std::vector<traffic::SecondCounters> counters;
    std::vector<Assertion> assertions;
    std::vector<std::vector<tunnel::RekeyEvent>> rekey_events;  // per tunnel, initiator view
    std::vector<tunnel::AlarmEvent> alarms;
    std::size_t successful_rekeys = 0;
    std::optional<double> outage_recovery_s;  // restart -> first successful rekey
    nlohmann::json report_json;
    std::string error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitAssertion = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitStartup = 3;

// Brings up link, both KMEs, every tunnel and the traffic harness in real
// time, runs for duration_s, tears down, and writes report.json,
// counters.csv and telemetry.csv into report_dir.
ScenarioOutcome run_scenario(const ScenarioConfig& config);

struct KeyBudgetConfig {
    int tunnels = 1;
    double rekey_interval_s = 120.0;
    double window_s = 120.0;
    qkd::LinkParams link;
    double warmup_s = 10.0;
};

struct KeyBudgetResult {
    std::uint64_t keys_generated = 0;  // inside the window
    std::uint64_t keys_consumed = 0;   // rekeys inside the window
    double consumption_ratio = 0.0;
    std::vector<std::vector<ike::ChildSa>> initiator_children;  // per tunnel, incl. initial SA
    std::vector<std::vector<ike::ChildSa>> responder_children;
};

// Simulated-time run of the key plane and control plane (no traffic): the
// link advances in 1 s steps, KMEs are accessed in process and rekeys fire
// on the simulated clock.
KeyBudgetResult simulate_key_budget(const KeyBudgetConfig& cfg);

// Fixed-input outputs of the key schedule for cross-implementation checks.
nlohmann::json kdf_vectors();

}  // namespace qtunnel::scenario
