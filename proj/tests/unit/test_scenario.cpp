#include "aggload/errors.hpp"
#include "aggload/scenario.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace aggload;
namespace fs = std::filesystem;

namespace {

nlohmann::json base_json() {
    return nlohmann::json::parse(R"({
      "schema_version": 1,
      "scenario": "setback",
      "model": { "noise_sigma": 0.0, "hazard": [0.0, 0.0] },
      "parameters": { "distribution": "heterogeneous", "relative_spread": 0.2,
                      "setpoint_range": [70.0, 78.0] },
      "population": 400,
      "clusters": 3,
      "threads": 1,
      "initial": { "on_fraction": 0.5 },
      "time": { "start": 0.0, "horizon": 3.0, "burn_in": 1.0, "mc_dt": 0.001,
                "output_interval": 0.01 },
      "events": [ { "time": 1.0, "value": 1.0 } ],
      "grid": { "cells_x1": 30, "cells_x2": 20, "margin": 6.0 },
      "seeds": { "sampling": 1, "clustering": 2, "simulation": 3 },
      "comparison": { "window": [0.0, 3.0], "settle_duration": 0.5, "smoothing": 0.05 },
      "setback": { "baseline_window": [0.0, 1.0], "steady_window": [2.0, 3.0] }
    })");
}

ScenarioConfig base() { return parse_config(base_json()); }

PowerSeries series(std::vector<double> t, std::vector<double> v) {
    PowerSeries s;
    s.times = std::move(t);
    s.values = std::move(v);
    return s;
}

PowerSeries sampled(double t0, double t1, double dt, auto f) {
    PowerSeries s;
    for (double t = t0; t <= t1 + 1e-9; t += dt) {
        s.times.push_back(t);
        s.values.push_back(f(t));
    }
    return s;
}

void expect_config_error(nlohmann::json j, const std::string& key) {
    try {
        (void)parse_config(j);
        ADD_FAILURE() << "no error for " << key;
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("aggload_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Comparison, IdenticalSeriesHaveZeroError) {
    const PowerSeries a = sampled(0.0, 2.0, 0.01, [](double t) { return 100.0 + 10.0 * t; });
    const ComparisonReport r = compare_series(a, a, {0.0, 2.0});
    EXPECT_EQ(r.rms_relative_error, 0.0);
    EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(Comparison, ConstantRatioGivesKnownError) {
    const PowerSeries a = sampled(0.0, 2.0, 0.01, [](double t) { return 50.0 + std::sin(t); });
    PowerSeries b = a;
    for (double& v : b.values) {
        v *= 1.1;
    }
    const ComparisonReport r = compare_series(a, b, {0.5, 1.5});
    EXPECT_NEAR(r.rms_relative_error, 0.1 / 1.1, 1e-12);
    EXPECT_NEAR(r.max_relative_error, 0.1 / 1.1, 1e-12);
}

TEST(Comparison, EmptyWindowIsAnError) {
    const PowerSeries a = sampled(0.0, 1.0, 0.1, [](double) { return 1.0; });
    EXPECT_THROW((void)compare_series(a, a, {2.0, 3.0}), StructureError);
}

TEST(Comparison, ReboundPeriodOfDampedOscillation) {
    const double period = 1.2;
    const PowerSeries s = sampled(0.0, 8.0, 0.01, [&](double t) {
        return 100.0 - 30.0 * std::exp(-t / 3.0) * std::sin(2.0 * std::numbers::pi * t / period);
    });
    const auto p = first_rebound_period(s, 0.0, 8.0, 0.05);
    ASSERT_TRUE(p.has_value());
    EXPECT_NEAR(*p, period, 0.02);
    const PowerSeries flat = sampled(0.0, 8.0, 0.01, [](double) { return 7.0; });
    EXPECT_FALSE(first_rebound_period(flat, 0.0, 8.0, 0.05).has_value());
}

TEST(Config, ErrorsNameTheKey) {
    auto j = base_json();
    j["population"] = 0;
    expect_config_error(j, "population");

    j = base_json();
    j["events"] = {{{"time", 2.0}, {"value", 1.0}}, {{"time", 1.0}, {"value", 0.0}}};
    expect_config_error(j, "events[1]");

    j = base_json();
    j["clusters"] = 401;
    expect_config_error(j, "clusters");

    j = base_json();
    j["time"]["horizon"] = "long";
    expect_config_error(j, "time.horizon");

    j = base_json();
    j["schema_version"] = 2;
    expect_config_error(j, "schema_version");

    j = base_json();
    j["scenario"] = "heatwave";
    expect_config_error(j, "scenario");
}

TEST(Config, JsonRoundTrip) {
    const ScenarioConfig c = base();
    const ScenarioConfig d = parse_config(to_json(c));
    EXPECT_EQ(to_json(d).dump(), to_json(c).dump());
    EXPECT_EQ(d.population, 400u);
    EXPECT_EQ(d.grid.cells_x1, 30);
    EXPECT_DOUBLE_EQ(d.sim_start(), -1.0);
}

TEST(Config, ShippedConfigsParse) {
    for (const char* name : {"setback", "price_response", "pev"}) {
        const fs::path p = fs::path(AGGLOAD_SOURCE_DIR) / "configs" / (std::string(name) + ".json");
        EXPECT_NO_THROW((void)load_config(p)) << name;
    }
}

TEST(Csv, PowerRoundTripWithSixDigits) {
    PowerSeries s = series({0.0, 0.01, 0.02}, {1234.56789, -0.0, 3.0e-7});
    s.source = SeriesSource::Pde;
    std::ostringstream out;
    write_power_csv(out, s);
    const std::string text = out.str();
    EXPECT_EQ(text.rfind("time_hours,power_kw,source\n", 0), 0u);
    EXPECT_NE(text.find("1234.57"), std::string::npos);
    EXPECT_NE(text.find("\n0.01,0,PDE\n"), std::string::npos);
    std::istringstream in(text);
    const PowerSeries r = read_power_csv(in);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r.source, SeriesSource::Pde);
    EXPECT_NEAR(r.values[0], 1234.57, 1e-9);
    EXPECT_EQ(r.values[1], 0.0);
}

TEST(Pipeline, InitialStatesFillTheDeadband) {
    ScenarioConfig c = base();
    c.population = 4000;
    const auto params = sample_population(c);
    const auto inits = initial_states(c, build_model(c), params);
    ASSERT_EQ(inits.size(), params.size());
    std::size_t on = 0;
    for (std::size_t i = 0; i < inits.size(); ++i) {
        const double u = params[i].alpha[hvac_layout::kSetpoint];
        const double d = params[i].alpha[hvac_layout::kDeadband];
        EXPECT_GE(inits[i].x(0), u - d);
        EXPECT_LE(inits[i].x(0), u + d);
        on += inits[i].mode == hvac_layout::kOn ? 1 : 0;
    }
    const double n = static_cast<double>(inits.size());
    EXPECT_NEAR(on / n, c.on_fraction, 4.0 * std::sqrt(0.25 / n));
}

TEST(Pipeline, PointMassReducesToOnePdeSolve) {
    auto j = base_json();
    j["parameters"]["distribution"] = "homogeneous";
    const ScenarioConfig c = parse_config(j);
    const auto samples = sample_population(c);
    const ClusterRun cl = run_clustering(c, samples);
    ASSERT_EQ(cl.representatives.size(), 1u);
    EXPECT_EQ(cl.clusters.weights[0], 1.0);

    const PdeRun run = run_pde(c, cl);
    const LoadModel model = build_model(c);
    const LoadParameters& p = samples.front();
    PdeOptions opt;
    opt.start = c.sim_start();
    opt.end = c.horizon;
    opt.output_interval = c.output_interval;
    const PdeResult single =
        solve(model, p, initial_density(c, model, p), build_schedule(c), c.grid, opt);
    const double w = model.output(hvac_layout::kOn, p.theta);
    ASSERT_EQ(run.power.size(), single.active_mass.size());
    for (std::size_t t = 0; t < run.power.size(); ++t) {
        const double expect = static_cast<double>(c.population) * w * single.active_mass.values[t];
        EXPECT_NEAR(run.power.values[t], expect, 1e-12 * std::max(1.0, expect));
    }
}

TEST(Pipeline, ZeroMagnitudeEventChangesNothing) {
    ScenarioConfig c = base();
    c.clusters = 1;
    ScenarioConfig quiet = c;
    quiet.events.clear();
    ScenarioConfig zero = c;
    zero.events = {ControlEvent{1.0, 0.0}};
    const auto samples = sample_population(c);
    const PdeRun a = run_pde(quiet, run_clustering(quiet, samples));
    const PdeRun b = run_pde(zero, run_clustering(zero, samples));
    ASSERT_EQ(a.power.size(), b.power.size());
    for (std::size_t t = 0; t < a.power.size(); ++t) {
        EXPECT_NEAR(a.power.values[t], b.power.values[t], 1e-9 * std::max(1.0, a.power.values[t]));
    }
}

TEST(Pipeline, SaturatedPriceMatchesTheBound) {
    auto j = base_json();
    j["scenario"] = "price_response";
    j["model"]["price_response"] = {{"slope", 1.0}, {"bound", 1.0}};
    j["population"] = 50;
    j.erase("setback");
    ScenarioConfig big = parse_config(j);
    big.events = {ControlEvent{1.0, 3.0}};
    ScenarioConfig unit = big;
    unit.events = {ControlEvent{1.0, 1.0}};
    const McRun a = run_mc(big);
    const McRun b = run_mc(unit);
    EXPECT_EQ(a.result.power.values, b.result.power.values);
}

TEST(Pipeline, MonteCarloSettlesNearThePde) {
    ScenarioConfig c = base();
    c.population = 1000;
    c.events.clear();
    c.burn_in = 3.0;
    const McRun mc = run_mc(c);
    const PdeRun pde = run_pde(c, run_clustering(c, mc.samples));
    const double m = mc.result.power.window_mean(1.0, 3.0);
    const double p = pde.power.window_mean(1.0, 3.0);
    EXPECT_NEAR(m / p, 1.0, 0.06);
}

TEST(Pipeline, MonteCarloIsDeterministicAndSeedSensitive) {
    ScenarioConfig c = base();
    c.population = 100;
    const McRun a = run_mc(c);
    const McRun b = run_mc(c);
    EXPECT_EQ(a.result.power.values, b.result.power.values);
    c.override_seeds(99);
    const McRun d = run_mc(c);
    EXPECT_NE(a.result.power.values, d.result.power.values);
}

TEST(Pev, DeterministicCohortCompletesAtThree) {
    auto j = base_json();
    j["scenario"] = "pev";
    j.erase("setback");
    j.erase("parameters");
    j["clusters"] = 1;
    j["population"] = 20;
    j["time"] = {{"start", 0.0}, {"horizon", 5.0}, {"mc_dt", 0.001}, {"output_interval", 0.01}};
    j["events"] = nlohmann::json::array();
    j["initial"] = {{"pev_box", {{2.0, 1.0}, {2.0, 1.0}}}};
    j["grid"] = {{"pev_lower", {-9.0, -0.5}}, {"pev_upper", {4.0, 4.0}}, {"pev_cell", {0.05, 0.05}}};
    j["comparison"]["window"] = {0.0, 5.0};
    const ScenarioConfig c = parse_config(j);
    const McRun mc = run_mc(c);
    const auto& mf = mc.result.mode_fraction;
    const auto& times = mc.result.power.times;
    for (std::size_t t = 0; t < times.size(); ++t) {
        // Waits 1 h, charges 2 h.
        const double expect_charging = (times[t] > 1.0 + 1e-9 && times[t] < 3.0 - 1e-9) ? 1.0 : 0.0;
        if (std::abs(times[t] - 1.0) > 0.02 && std::abs(times[t] - 3.0) > 0.02) {
            EXPECT_EQ(mf[t][pev_layout::kCharging], expect_charging) << times[t];
        }
    }
    EXPECT_EQ(mf.back()[pev_layout::kCompleted], 1.0);
}

TEST(Pev, HazardStartsChargingEarly) {
    auto j = base_json();
    j["scenario"] = "pev";
    j.erase("setback");
    j.erase("parameters");
    j["model"]["hazard"] = {1.0, 0.0};
    j["clusters"] = 1;
    j["population"] = 4000;
    j["time"] = {{"start", 0.0}, {"horizon", 1.0}, {"mc_dt", 0.001}, {"output_interval", 0.01}};
    j["events"] = nlohmann::json::array();
    j["initial"] = {{"pev_box", {{5.0, 1.0}, {5.0, 1.0}}}};
    j["grid"] = {{"pev_lower", {-9.0, -0.5}}, {"pev_upper", {6.0, 4.0}}, {"pev_cell", {0.1, 0.1}}};
    j["comparison"]["window"] = {0.0, 1.0};
    const ScenarioConfig c = parse_config(j);
    const McRun mc = run_mc(c);
    const auto& times = mc.result.power.times;
    const std::size_t i = static_cast<std::size_t>(std::lround(0.9 / c.output_interval));
    ASSERT_NEAR(times[i], 0.9, 1e-9);
    // Exponential waiting time with rate 1, censored by the x2 = 0 guard at t = 1.
    const double expect = 1.0 - std::exp(-0.9);
    const double se = std::sqrt(expect * (1.0 - expect) / 4000.0);
    EXPECT_NEAR(mc.result.mode_fraction[i][pev_layout::kCharging], expect, 4.0 * se);
}

TEST(Report, FailingClusterLogFailsTheReport) {
    const ScenarioConfig c = base();
    const PowerSeries s = sampled(0.0, 3.0, 0.01, [](double t) { return 1000.0 + t; });
    ClusterLog good;
    good.weight = 0.5;
    ClusterLog bad = good;
    bad.max_mass_error = 0.5;
    bad.within_tolerance = false;
    const ComparisonReport ok = evaluate(c, s, s, {good, good});
    const ComparisonReport r = evaluate(c, s, s, {good, bad});
    bool cluster_check_failed = false;
    for (const Check& k : r.checks) {
        if (k.name.find("cluster[1]") != std::string::npos && !k.passed) {
            cluster_check_failed = true;
        }
    }
    EXPECT_TRUE(cluster_check_failed);
    EXPECT_FALSE(r.passed());
    const nlohmann::json j = to_json(r);
    ASSERT_TRUE(j.contains("mass_log"));
    EXPECT_EQ(j["mass_log"].size(), 2u);
    const auto logs = cluster_logs_from_json(j["mass_log"]);
    EXPECT_FALSE(logs[1].within_tolerance);
    for (const Check& k : ok.checks) {
        if (k.name.find("cluster") != std::string::npos) {
            EXPECT_TRUE(k.passed) << k.name;
        }
    }
}

TEST(Outputs, ByteIdenticalAcrossRunsAndVerified) {
    ScenarioConfig c = base();
    c.population = 100;
    c.clusters = 2;
    const ScenarioResult r1 = run_scenario(c);
    const ScenarioResult r2 = run_scenario(c);
    const fs::path d1 = scratch("out1");
    const fs::path d2 = scratch("out2");
    write_outputs(d1, c, r1);
    write_outputs(d2, c, r2);
    for (const char* f :
         {"power_mc.csv", "power_pde.csv", "comparison.csv", "clusters.json", "report.json"}) {
        ASSERT_TRUE(fs::exists(d1 / f)) << f;
        EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    }
    const auto problems = verify_outputs(d1);
    // Checks may legitimately fail on this tiny population; only the files'
    // structure is asserted here.
    for (const auto& p : problems) {
        EXPECT_EQ(p.rfind("check ", 0), 0u) << p;
    }
    std::ofstream(d2 / "power_pde.csv") << "time_hours,power_kw,source\n1,x,pde\n";
    const auto broken = verify_outputs(d2);
    EXPECT_TRUE(std::any_of(broken.begin(), broken.end(),
                            [](const std::string& p) { return p.rfind("power_pde.csv", 0) == 0; }));
}
