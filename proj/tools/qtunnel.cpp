#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "qtunnel/scenario.hpp"

namespace sc = qtunnel::scenario;

namespace {

int run(const std::string& config_path, const std::string& report_dir, int duration, int tunnels,
        std::int64_t seed) {
    sc::ScenarioConfig cfg;
    try {
        cfg = sc::parse_config(config_path);
        if (!report_dir.empty()) cfg.report_dir = report_dir;
        if (duration > 0) {
            cfg.duration_s = duration;
            cfg.traffic.duration = duration;
        }
        if (tunnels > 0) {
            cfg.tunnel_count = tunnels;
            cfg.traffic.tunnels.clear();
            for (int i = 0; i < tunnels; ++i) cfg.traffic.tunnels.push_back(i);
            cfg.traffic.concurrency = std::max(cfg.traffic.concurrency, 2 * tunnels);
        }
        if (seed >= 0) cfg.link.seed = static_cast<std::uint64_t>(seed);
        cfg.validate();
    } catch (const sc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return sc::kExitConfig;
    }

    sc::ScenarioOutcome out;
    try {
        out = sc::run_scenario(cfg);
    } catch (const sc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return sc::kExitConfig;
    }
    if (out.exit_code == sc::kExitStartup) {
        std::cerr << out.error << '\n';
        return out.exit_code;
    }
    const auto& r = out.report;
    std::cout << "scenario " << sc::to_string(cfg.scenario) << ": " << cfg.tunnel_count << " tunnel(s), "
              << r.duration << " s\n"
              << "  tx " << r.tx_pkts << " pkts, rx " << r.rx_pkts << " pkts, dropped " << r.dropped << '\n'
              << "  avg tx " << r.avg_tx_mbps << " Mbps, avg rx " << r.avg_rx_mbps << " Mbps\n"
              << "  rekeys " << out.successful_rekeys << ", keys consumed " << r.keys_consumed << " of "
              << r.keys_generated << " generated\n";
    for (const auto& a : out.assertions) {
        std::cout << "  [" << (a.passed ? "PASS" : "FAIL") << "] " << a.name << ": " << a.detail << '\n';
    }
    std::cout << "report written to " << cfg.report_dir.string() << '\n';
    return out.exit_code;
}

int kdf_vectors(const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        std::cerr << "cannot write " << path << '\n';
        return 1;
    }
    out << sc::kdf_vectors().dump(2) << '\n';
    return 0;
}

int budget(int tunnels, double interval, double window, std::uint64_t seed) {
    sc::KeyBudgetConfig cfg;
    cfg.tunnels = tunnels;
    cfg.rekey_interval_s = interval;
    cfg.window_s = window;
    cfg.link.seed = seed;
    try {
        auto r = sc::simulate_key_budget(cfg);
        std::cout << "generated " << r.keys_generated << ", consumed " << r.keys_consumed << ", ratio "
                  << r.consumption_ratio * 100.0 << " %\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return sc::kExitConfig;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QKD-keyed IPsec tunnel testbed"};
    app.require_subcommand(1);

    std::string config_path, report_dir;
    int duration = 0, tunnels = 0;
    std::int64_t seed = -1;
    auto* run_cmd = app.add_subcommand("run", "run a scenario");
    run_cmd->add_option("--config", config_path, "scenario config (JSON)")->required();
    run_cmd->add_option("--report-dir", report_dir, "output directory");
    run_cmd->add_option("--duration", duration, "override duration_s")->check(CLI::PositiveNumber);
    run_cmd->add_option("--tunnels", tunnels, "override tunnel_count")->check(CLI::PositiveNumber);
    run_cmd->add_option("--seed", seed, "override link seed")->check(CLI::NonNegativeNumber);

    std::string vectors_out;
    auto* kdf_cmd = app.add_subcommand("kdf-vectors", "write key-schedule vectors as JSON");
    kdf_cmd->add_option("--out", vectors_out, "output file")->required();

    int b_tunnels = 1;
    double b_interval = 120.0, b_window = 120.0;
    std::uint64_t b_seed = 1;
    auto* budget_cmd = app.add_subcommand("budget", "simulated-time key consumption");
    budget_cmd->add_option("--tunnels", b_tunnels)->check(CLI::PositiveNumber);
    budget_cmd->add_option("--interval", b_interval)->check(CLI::PositiveNumber);
    budget_cmd->add_option("--window", b_window)->check(CLI::PositiveNumber);
    budget_cmd->add_option("--seed", b_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : sc::kExitConfig;
    }

    if (*run_cmd) return run(config_path, report_dir, duration, tunnels, seed);
    if (*kdf_cmd) return kdf_vectors(vectors_out);
    return budget(b_tunnels, b_interval, b_window, b_seed);
}
