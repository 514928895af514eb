#pragma once

// Demand-response experiments: configuration, the Monte Carlo and weighted-PDE
// pipelines, comparison metrics and plot-ready outputs.

#include "aggload/control.hpp"
#include "aggload/hetero.hpp"
#include "aggload/mc.hpp"
#include "aggload/model.hpp"
#include "aggload/pde.hpp"
#include "aggload/series.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace aggload {

inline constexpr int kSchemaVersion = 1;

enum class ScenarioKind { Setback, PriceResponse, Pev };

[[nodiscard]] std::string to_string(ScenarioKind kind);

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::PriceResponse;

    // model
    double noise_sigma = 0.0;
    std::array<double, 2> hazard{0.0, 0.0};
    double price_slope = 1.0;  // F per unit price deviation
    double price_bound = 1.0;
    double pev_charge_rate = 6.6;  // kW
    double pev_deadline_slack = 0.0;

    // parameter distribution (thermostat families)
    bool heterogeneous = true;
    HousePrior prior = default_house_prior();

    std::size_t population = 2000;

    // initial states: thermostat loads start uniform in their deadband with
    // this ON fraction; PEV jobs start waiting, uniform in pev_initial.
    double on_fraction = 0.5;
    Box pev_initial{{1.5, 0.5}, {2.5, 1.5}};

    // time axis (hours); both solvers start at start - burn_in
    double start = 0.0;
    double horizon = 8.0;
    double burn_in = 0.0;
    double mc_dt = 1e-3;
    double pde_dt = 0.0;
    double output_interval = 0.01;
    std::vector<ControlEvent> events;

    std::size_t clusters = 10;
    GridSpec grid;

    std::uint64_t sampling_seed = 1;
    std::uint64_t clustering_seed = 2;
    std::uint64_t simulation_seed = 3;

    // comparison
    std::array<double, 2> window{2.0, 8.0};
    std::optional<double> rms_tolerance;
    std::optional<double> period_tolerance;
    double settle_duration = 1.0;
    double smoothing = 0.05;  // moving-average width for period detection, hours

    // setback metrics
    std::array<double, 2> baseline_window{0.0, 1.0};
    std::array<double, 2> steady_window{3.0, 4.0};
    std::optional<std::array<double, 2>> reduction_range;
    std::optional<double> reduction_match;  // |MC - PDE| reduction, absolute

    // PDE tolerances
    double mass_tolerance = 1e-3;
    double escape_tolerance = 1e-6;
    double clip_tolerance = 1e-6;

    unsigned threads = 1;

    /// Throws ConfigError naming the offending key.
    void validate() const;
    [[nodiscard]] double sim_start() const { return start - burn_in; }
    [[nodiscard]] ModelFamily family() const;
    void override_seeds(std::uint64_t seed);
};

[[nodiscard]] ScenarioConfig parse_config(const nlohmann::json& j);
[[nodiscard]] ScenarioConfig load_config(const std::filesystem::path& path);
[[nodiscard]] nlohmann::json to_json(const ScenarioConfig& config);

[[nodiscard]] LoadModel build_model(const ScenarioConfig& config);
[[nodiscard]] ParameterDistribution build_distribution(const ScenarioConfig& config);
[[nodiscard]] ControlSchedule build_schedule(const ScenarioConfig& config);
[[nodiscard]] std::vector<HybridState> initial_states(const ScenarioConfig& config,
                                                      const LoadModel& model,
                                                      std::span<const LoadParameters> params);
/// PDE initial density matching initial_states() for one parameter set.
[[nodiscard]] DensityField initial_density(const ScenarioConfig& config, const LoadModel& model,
                                           const LoadParameters& params);

struct McRun {
    std::vector<LoadParameters> samples;
    PopulationResult result;
};

struct ClusterRun {
    ClusterSet clusters;
    std::vector<LoadParameters> representatives;
};

struct ClusterLog {
    double weight = 0.0;
    double max_mass_error = 0.0;
    double escaped = 0.0;
    double clipped = 0.0;
    double max_balance_residual = 0.0;
    double dt = 0.0;
    std::size_t steps = 0;
    bool within_tolerance = true;
};

struct PdeRun {
    ClusterRun clustering;
    PowerSeries power;
    std::vector<std::vector<double>> mode_mass;  // weighted, [output][mode position]
    std::vector<ClusterLog> logs;
    std::vector<PdeResult> results;
};

[[nodiscard]] std::vector<LoadParameters> sample_population(const ScenarioConfig& config);
[[nodiscard]] McRun run_mc(const ScenarioConfig& config);
/// Clusters `samples` (n_c forced to 1 for a point-mass distribution).
[[nodiscard]] ClusterRun run_clustering(const ScenarioConfig& config,
                                        const std::vector<LoadParameters>& samples);
[[nodiscard]] PdeRun run_pde(const ScenarioConfig& config, const ClusterRun& clustering);

struct Check {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool passed = true;
};

struct EventMetrics {
    double time = 0.0;
    double mc_settled = 0.0;
    double pde_settled = 0.0;
    std::optional<double> mc_period;
    std::optional<double> pde_period;
};

struct ComparisonReport {
    double window_start = 0.0;
    double window_end = 0.0;
    double rms_relative_error = 0.0;
    double max_relative_error = 0.0;
    std::vector<EventMetrics> events;
    std::vector<ClusterLog> mass_log;
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<Check> checks;

    [[nodiscard]] bool passed() const;
};

/// Relative error of `a` against reference `b` on [window[0], window[1]],
/// both resampled onto the coarser of the two grids.
[[nodiscard]] ComparisonReport compare_series(const PowerSeries& a, const PowerSeries& b,
                                              std::array<double, 2> window);

/// Distance between the first two prominent maxima of the smoothed series in
/// (t0, t1), or nullopt when fewer than two are found.
[[nodiscard]] std::optional<double> first_rebound_period(const PowerSeries& s, double t0,
                                                         double t1, double smoothing);

struct ScenarioResult {
    McRun mc;
    PdeRun pde;
    ComparisonReport report;
};

[[nodiscard]] ScenarioResult run_setback(const ScenarioConfig& config);
[[nodiscard]] ScenarioResult run_price_response(const ScenarioConfig& config);
[[nodiscard]] ScenarioResult run_pev(const ScenarioConfig& config);
[[nodiscard]] ScenarioResult run_scenario(const ScenarioConfig& config);

/// Fills metrics and checks of a report from finished MC and PDE runs.
[[nodiscard]] ComparisonReport evaluate(const ScenarioConfig& config, const PowerSeries& mc,
                                        const PowerSeries& pde,
                                        const std::vector<ClusterLog>& logs);

// Output formats ------------------------------------------------------------

/// `time_hours,power_kw,source`, 6 significant digits.
void write_power_csv(std::ostream& out, const PowerSeries& s);
[[nodiscard]] PowerSeries read_power_csv(std::istream& in);
/// `time_hours,mc_kw,pde_kw,relative_error` on the MC grid over the overlap.
void write_comparison_csv(std::ostream& out, const PowerSeries& mc, const PowerSeries& pde);
/// `load_index,time_hours,mode,x1,x2`.
void write_snapshot_csv(std::ostream& out, const PopulationState& snapshot);
[[nodiscard]] nlohmann::json to_json(const ComparisonReport& report);
[[nodiscard]] nlohmann::json to_json(const std::vector<ClusterLog>& logs);
[[nodiscard]] std::vector<ClusterLog> cluster_logs_from_json(const nlohmann::json& j);

/// Writes power_mc.csv, power_pde.csv, comparison.csv, clusters.json and
/// report.json into `dir`.
void write_outputs(const std::filesystem::path& dir, const ScenarioConfig& config,
                   const ScenarioResult& result);

/// Re-reads the files in `dir` and checks them (well-formed series, report
/// checks). Returns the list of failures; empty means all passed.
[[nodiscard]] std::vector<std::string> verify_outputs(const std::filesystem::path& dir);

}  // namespace aggload
