#include "aggload/errors.hpp"
#include "aggload/scenario.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace aggload;

namespace {

struct Common {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    bool verify = false;
};

ScenarioConfig load(const Common& o) {
    ScenarioConfig c = load_config(o.config);
    if (o.seed) {
        c.override_seeds(*o.seed);
    }
    return c;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + p.string());
    }
    out << s;
}

void write_series(const fs::path& p, const PowerSeries& s) {
    std::ostringstream os;
    write_power_csv(os, s);
    write_text(p, os.str());
}

PowerSeries read_series(const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw ConfigError("cannot open " + p.string());
    }
    return read_power_csv(in);
}

int finish(const Common& o, bool passed) {
    if (o.verify) {
        const auto failures = verify_outputs(o.out);
        for (const auto& f : failures) {
            std::cout << "verify: " << f << '\n';
        }
        passed = passed && failures.empty();
        std::cout << "verify: " << (failures.empty() ? "ok" : "FAILED") << '\n';
    }
    return passed ? 0 : 1;
}

int simulate_mc(const Common& o) {
    const ScenarioConfig c = load(o);
    fs::create_directories(o.out);
    const McRun run = run_mc(c);
    write_series(fs::path(o.out) / "power_mc.csv", run.result.power);
    std::cout << "loads: " << c.population << ", samples: " << run.result.power.size() << '\n';
    return finish(o, true);
}

int simulate_pde(const Common& o) {
    const ScenarioConfig c = load(o);
    fs::create_directories(o.out);
    const PdeRun run = run_pde(c, run_clustering(c, sample_population(c)));
    write_series(fs::path(o.out) / "power_pde.csv", run.power);
    write_text(fs::path(o.out) / "clusters.json",
               to_json(run.clustering.clusters, run.clustering.representatives).dump(2) + "\n");
    write_text(fs::path(o.out) / "mass_log.json", to_json(run.logs).dump(2) + "\n");
    bool ok = true;
    for (std::size_t i = 0; i < run.logs.size(); ++i) {
        const auto& l = run.logs[i];
        std::cout << "cluster " << i << ": weight " << l.weight << ", max |mass-1| "
                  << l.max_mass_error << ", escaped " << l.escaped << ", clipped " << l.clipped
                  << (l.within_tolerance ? "" : "  OUT OF TOLERANCE") << '\n';
        ok = ok && l.within_tolerance;
    }
    return finish(o, ok);
}

int cluster(const Common& o) {
    const ScenarioConfig c = load(o);
    fs::create_directories(o.out);
    const ClusterRun run = run_clustering(c, sample_population(c));
    write_text(fs::path(o.out) / "clusters.json",
               to_json(run.clusters, run.representatives).dump(2) + "\n");
    std::cout << "clusters: " << run.clusters.weights.size()
              << ", within-cluster distance: " << run.clusters.within_cluster_distance << '\n';
    return 0;
}

int compare(const Common& o) {
    const ScenarioConfig c = load(o);
    const fs::path dir(o.out);
    const PowerSeries mc = read_series(dir / "power_mc.csv");
    const PowerSeries pde = read_series(dir / "power_pde.csv");
    std::vector<ClusterLog> logs;
    if (std::ifstream in(dir / "mass_log.json"); in) {
        logs = cluster_logs_from_json(nlohmann::json::parse(in));
    }
    const ComparisonReport r = evaluate(c, mc, pde, logs);
    std::ostringstream cmp;
    write_comparison_csv(cmp, mc, pde);
    write_text(dir / "comparison.csv", cmp.str());
    nlohmann::json j = to_json(r);
    j["scenario"] = to_string(c.kind);
    j["config"] = to_json(c);
    write_text(dir / "report.json", j.dump(2) + "\n");
    std::cout << "rms relative error: " << r.rms_relative_error << '\n';
    for (const auto& ch : r.checks) {
        if (!ch.passed) {
            std::cout << "FAILED " << ch.name << ": " << ch.value << " (limit " << ch.limit << ")\n";
        }
    }
    return finish(o, r.passed());
}

int run_all(const Common& o) {
    const ScenarioConfig c = load(o);
    const ScenarioResult res = run_scenario(c);
    write_outputs(o.out, c, res);
    const auto& r = res.report;
    std::cout << "scenario: " << to_string(c.kind) << '\n'
              << "rms relative error: " << r.rms_relative_error << '\n';
    for (const auto& [k, v] : r.metrics) {
        std::cout << k << ": " << v << '\n';
    }
    for (const auto& ch : r.checks) {
        if (!ch.passed) {
            std::cout << "FAILED " << ch.name << ": " << ch.value << " (limit " << ch.limit << ")\n";
        }
    }
    return finish(o, r.passed());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aggregate load simulation: Monte Carlo and Fokker-Planck pipelines"};
    app.require_subcommand(1);
    Common opts;
    int (*handler)(const Common&) = nullptr;

    auto add = [&](const char* name, const char* help, int (*fn)(const Common&)) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config, "scenario config (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", opts.out, "output directory");
        sub->add_option("--seed-override", opts.seed, "use K for every seed");
        sub->add_flag("--verify", opts.verify, "check the written outputs");
        sub->callback([&handler, fn] { handler = fn; });
    };
    add("simulate-mc", "Monte Carlo population run", simulate_mc);
    add("simulate-pde", "clustered PDE run", simulate_pde);
    add("cluster", "parameter clustering only", cluster);
    add("compare", "compare power_mc.csv and power_pde.csv in --out", compare);
    add("run-scenario", "both pipelines, comparison and report", run_all);

    CLI11_PARSE(app, argc, argv);
    const auto t0 = std::chrono::steady_clock::now();
    int code = 1;
    try {
        code = handler(opts);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - t0;
    std::cout << "runtime: " << wall.count() << " s\n";
    return code;
}
