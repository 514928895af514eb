#include "aggload/scenario.hpp"

#include "aggload/errors.hpp"
#include "aggload/parallel.hpp"
#include "aggload/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace aggload {

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::Setback:
            return "setback";
        case ScenarioKind::PriceResponse:
            return "price_response";
        case ScenarioKind::Pev:
            return "pev";
    }
    return "unknown";
}

namespace {

ScenarioKind kind_from_string(const std::string& s) {
    if (s == "setback") {
        return ScenarioKind::Setback;
    }
    if (s == "price_response") {
        return ScenarioKind::PriceResponse;
    }
    if (s == "pev") {
        return ScenarioKind::Pev;
    }
    throw ConfigError("scenario: unknown kind '" + s + "' (setback, price_response, pev)");
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) {
        throw ConfigError(key + ": " + what);
    }
}

// Reads j[key] into `out` when present, naming the key on type errors.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path + key + ": wrong type");
    }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& out,
              const std::string& path) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return;
    }
    T v{};
    read(j, key, v, path);
    out = v;
}

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!j.contains(key)) {
        return empty;
    }
    if (!j.at(key).is_object()) {
        throw ConfigError(std::string(key) + ": must be an object");
    }
    return j.at(key);
}

void check_window(const std::array<double, 2>& w, const std::string& key) {
    require(std::isfinite(w[0]) && std::isfinite(w[1]) && w[0] < w[1], key,
            "window must be finite with start < end");
}

}  // namespace

ModelFamily ScenarioConfig::family() const {
    switch (kind) {
        case ScenarioKind::Setback:
            return ModelFamily::HvacEtp;
        case ScenarioKind::PriceResponse:
            return ModelFamily::PriceResponsiveHvac;
        case ScenarioKind::Pev:
            return ModelFamily::Pev;
    }
    return ModelFamily::HvacEtp;
}

void ScenarioConfig::override_seeds(std::uint64_t seed) {
    sampling_seed = seed;
    clustering_seed = seed;
    simulation_seed = seed;
}

void ScenarioConfig::validate() const {
    require(horizon > start, "time.horizon", "must exceed time.start");
    require(burn_in >= 0.0, "time.burn_in", "must be nonnegative");
    require(mc_dt > 0.0, "time.mc_dt", "must be positive");
    require(pde_dt >= 0.0, "time.pde_dt", "must be nonnegative (0 = automatic)");
    require(output_interval > 0.0, "time.output_interval", "must be positive");
    require(population >= 1, "population", "must be at least 1");
    require(clusters >= 1, "clusters", "must be at least 1");
    require(clusters <= population, "clusters", "cannot exceed population");
    require(noise_sigma >= 0.0, "model.noise_sigma", "must be nonnegative");
    require(hazard[0] >= 0.0 && hazard[1] >= 0.0, "model.hazard", "must be nonnegative");
    require(on_fraction >= 0.0 && on_fraction <= 1.0, "initial.on_fraction", "must lie in [0, 1]");
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < events.size(); ++k) {
        const auto& e = events[k];
        const std::string key = "events[" + std::to_string(k) + "]";
        require(std::isfinite(e.time) && std::isfinite(e.value), key, "must be finite");
        require(e.time > prev, key, "events must be strictly time-ordered");
        require(e.time >= start && e.time <= horizon, key, "event time outside [start, horizon]");
        prev = e.time;
    }
    check_window(window, "comparison.window");
    require(window[0] >= start && window[1] <= horizon, "comparison.window",
            "must lie within [start, horizon]");
    require(settle_duration > 0.0, "comparison.settle_duration", "must be positive");
    require(smoothing >= 0.0, "comparison.smoothing", "must be nonnegative");
    require(mass_tolerance > 0.0, "tolerances.mass", "must be positive");
    if (kind == ScenarioKind::Pev) {
        require(pev_charge_rate > 0.0, "model.pev.charge_rate_kw", "must be positive");
        require(pev_initial.lo[0] <= pev_initial.hi[0] && pev_initial.lo[1] <= pev_initial.hi[1] &&
                    pev_initial.lo[0] >= 0.0 && pev_initial.lo[1] > 0.0,
                "initial.pev_box", "must be an ordered box with x1 >= 0, x2 > 0");
    } else {
        require(prior.relative_spread >= 0.0 && prior.relative_spread < 1.0,
                "parameters.relative_spread", "must lie in [0, 1)");
        require(prior.setpoint_min <= prior.setpoint_max, "parameters.setpoint_range",
                "must be ordered");
        require(prior.nominal.deadband > 0.0, "parameters.house.deadband", "must be positive");
    }
    if (kind == ScenarioKind::PriceResponse) {
        require(price_bound > 0.0, "model.price_response.bound", "must be positive");
    }
    if (kind == ScenarioKind::Setback) {
        check_window(baseline_window, "setback.baseline_window");
        check_window(steady_window, "setback.steady_window");
    }
}

ScenarioConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("config: top level must be an object");
    }
    ScenarioConfig c;
    int version = 0;
    read(j, "schema_version", version, "");
    require(version == kSchemaVersion, "schema_version",
            "expected " + std::to_string(kSchemaVersion));
    std::string kind;
    read(j, "scenario", kind, "");
    require(!kind.empty(), "scenario", "missing");
    c.kind = kind_from_string(kind);
    if (c.kind == ScenarioKind::Setback) {
        c.window = {0.0, 8.0};
        c.reduction_range = std::array<double, 2>{0.05, 0.15};
    }

    const auto& m = section(j, "model");
    read(m, "noise_sigma", c.noise_sigma, "model.");
    read(m, "hazard", c.hazard, "model.");
    const auto& pr = section(m, "price_response");
    read(pr, "slope", c.price_slope, "model.price_response.");
    read(pr, "bound", c.price_bound, "model.price_response.");
    const auto& pev = section(m, "pev");
    read(pev, "charge_rate_kw", c.pev_charge_rate, "model.pev.");
    read(pev, "deadline_slack", c.pev_deadline_slack, "model.pev.");

    const auto& p = section(j, "parameters");
    std::string dist = "heterogeneous";
    read(p, "distribution", dist, "parameters.");
    require(dist == "heterogeneous" || dist == "homogeneous", "parameters.distribution",
            "must be heterogeneous or homogeneous");
    c.heterogeneous = dist == "heterogeneous";
    read(p, "relative_spread", c.prior.relative_spread, "parameters.");
    std::array<double, 2> sp{c.prior.setpoint_min, c.prior.setpoint_max};
    read(p, "setpoint_range", sp, "parameters.");
    c.prior.setpoint_min = sp[0];
    c.prior.setpoint_max = sp[1];
    read(p, "sizing_factor", c.prior.sizing_factor, "parameters.");
    read(p, "design_indoor", c.prior.design_indoor, "parameters.");
    const auto& h = section(p, "house");
    auto& n = c.prior.nominal;
    read(h, "air_heat_capacity", n.air_heat_capacity, "parameters.house.");
    read(h, "mass_heat_capacity", n.mass_heat_capacity, "parameters.house.");
    read(h, "envelope_conductance", n.envelope_conductance, "parameters.house.");
    read(h, "mass_conductance", n.mass_conductance, "parameters.house.");
    read(h, "internal_gain", n.internal_gain, "parameters.house.");
    read(h, "mass_gain", n.mass_gain, "parameters.house.");
    read(h, "cop", n.cop, "parameters.house.");
    read(h, "outdoor_temperature", n.outdoor_temperature, "parameters.house.");
    read(h, "setpoint", n.setpoint, "parameters.house.");
    read(h, "deadband", n.deadband, "parameters.house.");
    n.cooling_capacity = c.prior.sized_capacity(n);

    read(j, "population", c.population, "");
    read(j, "clusters", c.clusters, "");
    read(j, "threads", c.threads, "");

    const auto& init = section(j, "initial");
    read(init, "on_fraction", c.on_fraction, "initial.");
    if (init.contains("pev_box")) {
        std::array<std::array<double, 2>, 2> box{};
        read(init, "pev_box", box, "initial.");
        c.pev_initial = Box{box[0], box[1]};
    }

    const auto& t = section(j, "time");
    read(t, "start", c.start, "time.");
    read(t, "horizon", c.horizon, "time.");
    read(t, "burn_in", c.burn_in, "time.");
    read(t, "mc_dt", c.mc_dt, "time.");
    read(t, "pde_dt", c.pde_dt, "time.");
    read(t, "output_interval", c.output_interval, "time.");

    if (j.contains("events")) {
        require(j.at("events").is_array(), "events", "must be an array");
        for (std::size_t k = 0; k < j.at("events").size(); ++k) {
            const auto& e = j.at("events").at(k);
            const std::string key = "events[" + std::to_string(k) + "].";
            ControlEvent ev;
            require(e.contains("time") && e.contains("value"), key.substr(0, key.size() - 1),
                    "needs time and value");
            read(e, "time", ev.time, key);
            read(e, "value", ev.value, key);
            c.events.push_back(ev);
        }
    }

    if (j.contains("grid")) {
        c.grid = grid_spec_from_json(j.at("grid"));
    }

    const auto& s = section(j, "seeds");
    read(s, "sampling", c.sampling_seed, "seeds.");
    read(s, "clustering", c.clustering_seed, "seeds.");
    read(s, "simulation", c.simulation_seed, "seeds.");

    const auto& cmp = section(j, "comparison");
    read(cmp, "window", c.window, "comparison.");
    read_opt(cmp, "rms_tolerance", c.rms_tolerance, "comparison.");
    read_opt(cmp, "period_tolerance", c.period_tolerance, "comparison.");
    read(cmp, "settle_duration", c.settle_duration, "comparison.");
    read(cmp, "smoothing", c.smoothing, "comparison.");

    const auto& sb = section(j, "setback");
    read(sb, "baseline_window", c.baseline_window, "setback.");
    read(sb, "steady_window", c.steady_window, "setback.");
    read_opt(sb, "reduction_range", c.reduction_range, "setback.");
    read_opt(sb, "reduction_match", c.reduction_match, "setback.");

    const auto& tol = section(j, "tolerances");
    read(tol, "mass", c.mass_tolerance, "tolerances.");
    read(tol, "escape", c.escape_tolerance, "tolerances.");
    read(tol, "clip", c.clip_tolerance, "tolerances.");

    c.validate();
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

nlohmann::json to_json(const ScenarioConfig& c) {
    const auto& n = c.prior.nominal;
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["scenario"] = to_string(c.kind);
    j["model"] = {{"noise_sigma", c.noise_sigma},
                  {"hazard", c.hazard},
                  {"price_response", {{"slope", c.price_slope}, {"bound", c.price_bound}}},
                  {"pev",
                   {{"charge_rate_kw", c.pev_charge_rate},
                    {"deadline_slack", c.pev_deadline_slack}}}};
    j["parameters"] = {
        {"distribution", c.heterogeneous ? "heterogeneous" : "homogeneous"},
        {"relative_spread", c.prior.relative_spread},
        {"setpoint_range", {c.prior.setpoint_min, c.prior.setpoint_max}},
        {"sizing_factor", c.prior.sizing_factor},
        {"design_indoor", c.prior.design_indoor},
        {"house",
         {{"air_heat_capacity", n.air_heat_capacity},
          {"mass_heat_capacity", n.mass_heat_capacity},
          {"envelope_conductance", n.envelope_conductance},
          {"mass_conductance", n.mass_conductance},
          {"internal_gain", n.internal_gain},
          {"mass_gain", n.mass_gain},
          {"cop", n.cop},
          {"outdoor_temperature", n.outdoor_temperature},
          {"setpoint", n.setpoint},
          {"deadband", n.deadband}}}};
    j["population"] = c.population;
    j["clusters"] = c.clusters;
    j["threads"] = c.threads;
    j["initial"] = {{"on_fraction", c.on_fraction},
                    {"pev_box", {c.pev_initial.lo, c.pev_initial.hi}}};
    j["time"] = {{"start", c.start},     {"horizon", c.horizon}, {"burn_in", c.burn_in},
                 {"mc_dt", c.mc_dt},     {"pde_dt", c.pde_dt},   {"output_interval", c.output_interval}};
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : c.events) {
        ev.push_back({{"time", e.time}, {"value", e.value}});
    }
    j["events"] = ev;
    j["grid"] = to_json(c.grid);
    j["seeds"] = {{"sampling", c.sampling_seed},
                  {"clustering", c.clustering_seed},
                  {"simulation", c.simulation_seed}};
    j["comparison"] = {{"window", c.window},
                       {"settle_duration", c.settle_duration},
                       {"smoothing", c.smoothing}};
    if (c.rms_tolerance) {
        j["comparison"]["rms_tolerance"] = *c.rms_tolerance;
    }
    if (c.period_tolerance) {
        j["comparison"]["period_tolerance"] = *c.period_tolerance;
    }
    j["setback"] = {{"baseline_window", c.baseline_window}, {"steady_window", c.steady_window}};
    if (c.reduction_range) {
        j["setback"]["reduction_range"] = *c.reduction_range;
    }
    if (c.reduction_match) {
        j["setback"]["reduction_match"] = *c.reduction_match;
    }
    j["tolerances"] = {{"mass", c.mass_tolerance},
                       {"escape", c.escape_tolerance},
                       {"clip", c.clip_tolerance}};
    return j;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

LoadModel build_model(const ScenarioConfig& c) {
    if (c.kind == ScenarioKind::Pev) {
        return make_pev(c.pev_charge_rate, c.pev_deadline_slack, c.hazard);
    }
    const EtpParameters nominal = etp_from_house(c.prior.nominal, c.noise_sigma, c.hazard);
    LoadModel base = make_hvac_etp(nominal);
    if (c.kind == ScenarioKind::PriceResponse) {
        return make_price_responsive(base, c.price_slope, c.price_bound);
    }
    return base;
}

ParameterDistribution build_distribution(const ScenarioConfig& c) {
    if (c.kind == ScenarioKind::Pev) {
        ParameterDistribution d;
        d.coordinates = {CoordinateSpec::point("charge_rate_kw", c.pev_charge_rate),
                         CoordinateSpec::point("deadline_slack", c.pev_deadline_slack)};
        d.realize = [](std::span<const double> v) { return LoadParameters{{v[0]}, {v[1]}}; };
        return d;
    }
    if (!c.heterogeneous) {
        return hvac_point_distribution(etp_from_house(c.prior.nominal, c.noise_sigma, c.hazard));
    }
    return hvac_distribution(c.prior, c.noise_sigma);
}

ControlSchedule build_schedule(const ScenarioConfig& c) { return ControlSchedule(c.events, 0.0); }

namespace {

// Deadband box (both temperatures) of one load at the scenario start.
Box start_deadband(const ScenarioConfig& c, const LoadModel& model, const LoadParameters& p) {
    using namespace hvac_layout;
    const double u =
        p.alpha[kSetpoint] + model.setpoint_shift(build_schedule(c).value_at(c.sim_start()));
    const double d = p.alpha[kDeadband];
    return Box{{u - d, u - d}, {u + d, u + d}};
}

}  // namespace

std::vector<HybridState> initial_states(const ScenarioConfig& c, const LoadModel& model,
                                        std::span<const LoadParameters> params) {
    std::vector<HybridState> out;
    out.reserve(params.size());
    const std::uint64_t stream = mix64(c.simulation_seed ^ 0x696e6974ULL);
    for (std::size_t i = 0; i < params.size(); ++i) {
        RandomStream rng(stream, i);
        HybridState s;
        if (c.kind == ScenarioKind::Pev) {
            s.mode = pev_layout::kWaiting;
            s.x = make_state({rng.uniform(c.pev_initial.lo[0], c.pev_initial.hi[0]),
                              rng.uniform(c.pev_initial.lo[1], c.pev_initial.hi[1])});
        } else {
            const Box b = start_deadband(c, model, params[i]);
            const double x1 = rng.uniform(b.lo[0], b.hi[0]);
            const double x2 = rng.uniform(b.lo[1], b.hi[1]);
            s.mode = rng.uniform() < c.on_fraction ? hvac_layout::kOn : hvac_layout::kOff;
            s.x = make_state({x1, x2});
        }
        out.push_back(std::move(s));
    }
    return out;
}

DensityField initial_density(const ScenarioConfig& c, const LoadModel& model,
                             const LoadParameters& params) {
    const ControlSchedule schedule = build_schedule(c);
    const DomainPartition part =
        build_partition(model, params, schedule.value_at(c.sim_start()), c.grid);
    if (c.kind == ScenarioKind::Pev) {
        Box b = c.pev_initial;
        return uniform_density(part, {1.0, 0.0, 0.0}, b);
    }
    return uniform_density(part, {1.0 - c.on_fraction, c.on_fraction},
                           start_deadband(c, model, params));
}

std::vector<LoadParameters> sample_population(const ScenarioConfig& c) {
    return sample_parameters(build_distribution(c), c.population, c.sampling_seed);
}

McRun run_mc(const ScenarioConfig& c) {
    c.validate();
    const LoadModel model = build_model(c);
    McRun run;
    run.samples = sample_population(c);
    const auto inits = initial_states(c, model, run.samples);
    SimulationOptions opt;
    opt.start = c.sim_start();
    opt.horizon = c.horizon;
    opt.dt = c.mc_dt;
    opt.output_interval = c.output_interval;
    opt.threads = c.threads;
    run.result = simulate_population(model, run.samples, inits, opt, build_schedule(c),
                                     c.simulation_seed);
    run.result.power.metadata["N"] = std::to_string(c.population);
    return run;
}

ClusterRun run_clustering(const ScenarioConfig& c, const std::vector<LoadParameters>& samples) {
    ClusterRun run;
    const ParameterDistribution dist = build_distribution(c);
    const FeatureMap features = c.kind == ScenarioKind::Pev ? pev_features() : hvac_features();
    if (dist.is_point_mass()) {
        // One cluster holding the common parameter set verbatim, so the
        // pipeline reduces to a single PDE solve exactly.
        run.clusters.centers = {features.extract(samples.front())};
        run.clusters.weights = {1.0};
        run.clusters.sizes = {samples.size()};
        run.clusters.assignment.assign(samples.size(), 0);
        run.clusters.seed = c.clustering_seed;
        run.representatives = {samples.front()};
        return run;
    }
    const std::size_t k = std::min(c.clusters, samples.size());
    std::vector<std::vector<double>> x;
    x.reserve(samples.size());
    for (const auto& s : samples) {
        x.push_back(features.extract(s));
    }
    run.clusters = kmeans(x, k, c.clustering_seed);
    run.representatives = cluster_parameters(samples, run.clusters, features);
    return run;
}

PdeRun run_pde(const ScenarioConfig& c, const ClusterRun& clustering) {
    c.validate();
    const LoadModel model = build_model(c);
    const ControlSchedule schedule = build_schedule(c);
    const auto& reps = clustering.representatives;
    const std::size_t k = reps.size();
    PdeOptions opt;
    opt.start = c.sim_start();
    opt.end = c.horizon;
    opt.dt = c.pde_dt;
    opt.output_interval = c.output_interval;
    opt.mass_tolerance = c.mass_tolerance;
    opt.escape_tolerance = c.escape_tolerance;
    opt.clip_tolerance = c.clip_tolerance;

    PdeRun run;
    run.clustering = clustering;
    run.results.resize(k);
    parallel_for(k, c.threads, [&](std::size_t i) {
        const DensityField init = initial_density(c, model, reps[i]);
        run.results[i] = solve(model, reps[i], init, schedule, c.grid, opt);
    });

    std::vector<PowerSeries> active;
    std::vector<double> ratings;
    for (std::size_t i = 0; i < k; ++i) {
        active.push_back(run.results[i].active_mass);
        double w = 0.0;
        for (Mode q : model.modes()) {
            w = std::max(w, model.output(q, reps[i].theta));
        }
        ratings.push_back(w);
        const auto& r = run.results[i];
        run.logs.push_back(ClusterLog{clustering.clusters.weights[i], r.max_mass_error, r.escaped,
                                      r.clipped, r.max_balance_residual, r.dt, r.steps,
                                      r.within_tolerance(opt)});
    }
    run.power = mixture_power(active, clustering.clusters.weights,
                              static_cast<double>(c.population), ratings);
    run.power.metadata["clusters"] = std::to_string(k);
    run.power.metadata["N"] = std::to_string(c.population);
    const std::size_t n_out = run.power.size();
    const std::size_t n_modes = model.modes().size();
    run.mode_mass.assign(n_out, std::vector<double>(n_modes, 0.0));
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t t = 0; t < n_out; ++t) {
            for (std::size_t m = 0; m < n_modes; ++m) {
                run.mode_mass[t][m] += clustering.clusters.weights[i] * run.results[i].mode_mass[t][m];
            }
        }
    }
    return run;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

bool ComparisonReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

namespace {

std::vector<double> window_times(const PowerSeries& s, double t0, double t1) {
    std::vector<double> out;
    for (double t : s.times) {
        if (t >= t0 - 1e-12 && t <= t1 + 1e-12) {
            out.push_back(t);
        }
    }
    return out;
}

}  // namespace

ComparisonReport compare_series(const PowerSeries& a, const PowerSeries& b,
                                std::array<double, 2> window) {
    a.validate();
    b.validate();
    const double lo = std::max({window[0], a.times.front(), b.times.front()});
    const double hi = std::min({window[1], a.times.back(), b.times.back()});
    if (a.size() == 0 || b.size() == 0 || !(hi >= lo)) {
        throw StructureError("compare_series: empty comparison window");
    }
    auto ta = window_times(a, lo, hi);
    auto tb = window_times(b, lo, hi);
    const auto& grid = ta.size() <= tb.size() ? ta : tb;
    if (grid.empty()) {
        throw StructureError("compare_series: no samples inside the window");
    }
    double mean_b = 0.0;
    for (double t : grid) {
        mean_b += std::abs(b.interpolate(t));
    }
    mean_b /= static_cast<double>(grid.size());
    const double floor = 0.01 * mean_b;
    double sq = 0.0;
    double worst = 0.0;
    for (double t : grid) {
        const double ref = b.interpolate(t);
        const double den = std::max(std::abs(ref), floor);
        const double e = den > 0.0 ? (a.interpolate(t) - ref) / den : 0.0;
        sq += e * e;
        worst = std::max(worst, std::abs(e));
    }
    ComparisonReport r;
    r.window_start = lo;
    r.window_end = hi;
    r.rms_relative_error = std::sqrt(sq / static_cast<double>(grid.size()));
    r.max_relative_error = worst;
    return r;
}

std::optional<double> first_rebound_period(const PowerSeries& s, double t0, double t1,
                                           double smoothing) {
    std::vector<double> t;
    std::vector<double> v;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.times[i] > t0 && s.times[i] < t1) {
            t.push_back(s.times[i]);
            v.push_back(s.values[i]);
        }
    }
    if (t.size() < 5) {
        return std::nullopt;
    }
    // Centered moving average over `smoothing` hours.
    const double step = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
    const auto half = static_cast<std::size_t>(std::lround(0.5 * smoothing / step));
    std::vector<double> m(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t a = i >= half ? i - half : 0;
        const std::size_t b = std::min(v.size() - 1, i + half);
        double sum = 0.0;
        for (std::size_t k = a; k <= b; ++k) {
            sum += v[k];
        }
        m[i] = sum / static_cast<double>(b - a + 1);
    }
    const auto [mn, mx] = std::minmax_element(m.begin(), m.end());
    const double prominence = 0.1 * (*mx - *mn);
    if (!(prominence > 0.0)) {
        return std::nullopt;
    }
    // Zigzag with hysteresis: an extremum is confirmed once the series has
    // reversed from it by `prominence`. A maximum still pending at the end of
    // the window counts if it is interior and rose by `prominence`.
    std::vector<double> peaks;
    bool rising = true;
    std::size_t ext = 0;  // index of the pending extremum
    double last_min = m.front();
    for (std::size_t i = 1; i < m.size(); ++i) {
        if (rising) {
            if (m[i] > m[ext]) {
                ext = i;
            } else if (m[ext] - m[i] >= prominence) {
                if (m[ext] - last_min >= prominence) {
                    peaks.push_back(t[ext]);
                    if (peaks.size() == 2) {
                        return peaks[1] - peaks[0];
                    }
                }
                rising = false;
                ext = i;
            }
        } else {
            if (m[i] < m[ext]) {
                ext = i;
            } else if (m[i] - m[ext] >= prominence) {
                last_min = m[ext];
                rising = true;
                ext = i;
            }
        }
    }
    if (rising && peaks.size() == 1 && ext + 1 < m.size() && m[ext] - last_min >= prominence) {
        return t[ext] - peaks[0];
    }
    return std::nullopt;
}

ComparisonReport evaluate(const ScenarioConfig& c, const PowerSeries& mc, const PowerSeries& pde,
                          const std::vector<ClusterLog>& logs) {
    ComparisonReport r = compare_series(pde, mc, c.window);
    r.mass_log = logs;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const auto& l = logs[i];
        const std::string tag = "cluster[" + std::to_string(i) + "].";
        r.checks.push_back({tag + "mass_error", l.max_mass_error, c.mass_tolerance,
                            l.max_mass_error <= c.mass_tolerance});
        r.checks.push_back({tag + "escaped_mass", l.escaped, c.escape_tolerance,
                            l.escaped <= c.escape_tolerance});
        r.checks.push_back({tag + "clipped_mass", l.clipped, c.clip_tolerance,
                            l.clipped <= c.clip_tolerance});
        r.checks.push_back({tag + "balance_residual", l.max_balance_residual, 1e-10,
                            l.max_balance_residual <= 1e-10});
    }
    if (c.rms_tolerance) {
        r.checks.push_back({"rms_relative_error", r.rms_relative_error, *c.rms_tolerance,
                            r.rms_relative_error <= *c.rms_tolerance});
    }

    // Segments between consecutive events (and the horizon).
    for (std::size_t k = 0; k < c.events.size(); ++k) {
        const double t0 = c.events[k].time;
        const double t1 = k + 1 < c.events.size() ? c.events[k + 1].time : c.horizon;
        EventMetrics e;
        e.time = t0;
        const double s0 = std::max(t0, t1 - c.settle_duration);
        e.mc_settled = mc.window_mean(s0, t1);
        e.pde_settled = pde.window_mean(s0, t1);
        e.mc_period = first_rebound_period(mc, t0, t1, c.smoothing);
        e.pde_period = first_rebound_period(pde, t0, t1, c.smoothing);
        if (c.period_tolerance) {
            const std::string name = "event[" + std::to_string(k) + "].period_mismatch";
            if (e.mc_period && e.pde_period) {
                const double rel = std::abs(*e.pde_period - *e.mc_period) / *e.mc_period;
                r.checks.push_back({name, rel, *c.period_tolerance, rel <= *c.period_tolerance});
            } else {
                r.checks.push_back({name, std::numeric_limits<double>::infinity(),
                                    *c.period_tolerance, false});
            }
        }
        r.events.push_back(e);
    }

    if (c.kind == ScenarioKind::Setback) {
        const double mc_base = mc.window_mean(c.baseline_window[0], c.baseline_window[1]);
        const double mc_set = mc.window_mean(c.steady_window[0], c.steady_window[1]);
        const double pde_base = pde.window_mean(c.baseline_window[0], c.baseline_window[1]);
        const double pde_set = pde.window_mean(c.steady_window[0], c.steady_window[1]);
        const double mc_red = 1.0 - mc_set / mc_base;
        const double pde_red = 1.0 - pde_set / pde_base;
        r.metrics.emplace_back("mc_baseline_kw", mc_base);
        r.metrics.emplace_back("mc_setback_kw", mc_set);
        r.metrics.emplace_back("mc_reduction", mc_red);
        r.metrics.emplace_back("pde_baseline_kw", pde_base);
        r.metrics.emplace_back("pde_setback_kw", pde_set);
        r.metrics.emplace_back("pde_reduction", pde_red);
        if (c.reduction_range) {
            const auto& rr = *c.reduction_range;
            r.checks.push_back({"mc_reduction_low", mc_red, rr[0], mc_red >= rr[0]});
            r.checks.push_back({"mc_reduction_high", mc_red, rr[1], mc_red <= rr[1]});
        }
        if (c.reduction_match) {
            const double gap = std::abs(pde_red - mc_red);
            r.checks.push_back({"reduction_match", gap, *c.reduction_match,
                                gap <= *c.reduction_match});
        }
        // Rebound: the peak after the last event (release) against the baseline.
        if (!c.events.empty()) {
            const double rel = c.events.back().time;
            double peak = -std::numeric_limits<double>::infinity();
            double peak_pde = peak;
            for (std::size_t i = 0; i < mc.size(); ++i) {
                if (mc.times[i] > rel) {
                    peak = std::max(peak, mc.values[i]);
                }
            }
            for (std::size_t i = 0; i < pde.size(); ++i) {
                if (pde.times[i] > rel) {
                    peak_pde = std::max(peak_pde, pde.values[i]);
                }
            }
            r.metrics.emplace_back("mc_rebound_peak_kw", peak);
            r.metrics.emplace_back("pde_rebound_peak_kw", peak_pde);
            r.checks.push_back({"mc_rebound_exceeds_baseline", peak, mc_base, peak > mc_base});
        }
    }
    return r;
}

namespace {

ScenarioResult run_pipelines(const ScenarioConfig& c) {
    ScenarioResult res;
    // The two pipelines share nothing but the (deterministic) parameter sample.
    auto mc = std::async(std::launch::async, [&c] { return run_mc(c); });
    const ClusterRun cl = run_clustering(c, sample_population(c));
    res.pde = run_pde(c, cl);
    res.mc = mc.get();
    res.report = evaluate(c, res.mc.result.power, res.pde.power, res.pde.logs);
    if (c.kind == ScenarioKind::Pev) {
        // Completed-mode mass curves.
        double worst = 0.0;
        const auto& mf = res.mc.result.mode_fraction;
        const auto& pm = res.pde.mode_mass;
        for (std::size_t t = 0; t < std::min(mf.size(), pm.size()); ++t) {
            worst = std::max(worst, std::abs(mf[t][pev_layout::kCompleted] -
                                             pm[t][pev_layout::kCompleted]));
        }
        res.report.metrics.emplace_back("completed_fraction_max_abs_diff", worst);
    }
    return res;
}

}  // namespace

ScenarioResult run_setback(const ScenarioConfig& c) {
    if (c.kind != ScenarioKind::Setback) {
        throw ConfigError("scenario: run_setback needs scenario = setback");
    }
    return run_pipelines(c);
}

ScenarioResult run_price_response(const ScenarioConfig& c) {
    if (c.kind != ScenarioKind::PriceResponse) {
        throw ConfigError("scenario: run_price_response needs scenario = price_response");
    }
    return run_pipelines(c);
}

ScenarioResult run_pev(const ScenarioConfig& c) {
    if (c.kind != ScenarioKind::Pev) {
        throw ConfigError("scenario: run_pev needs scenario = pev");
    }
    return run_pipelines(c);
}

ScenarioResult run_scenario(const ScenarioConfig& c) {
    switch (c.kind) {
        case ScenarioKind::Setback:
            return run_setback(c);
        case ScenarioKind::PriceResponse:
            return run_price_response(c);
        case ScenarioKind::Pev:
            return run_pev(c);
    }
    throw ConfigError("scenario: unknown kind");
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

namespace {

struct Sig6 {
    double v;
};

std::ostream& operator<<(std::ostream& os, Sig6 s) {
    // Avoid "-0" so equal values always print identically.
    const double v = s.v == 0.0 ? 0.0 : s.v;
    return os << std::setprecision(6) << v;
}

}  // namespace

void write_power_csv(std::ostream& out, const PowerSeries& s) {
    s.validate();
    out << "time_hours,power_kw,source\n";
    const std::string tag = to_string(s.source);
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << Sig6{s.times[i]} << ',' << Sig6{s.values[i]} << ',' << tag << '\n';
    }
}

PowerSeries read_power_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "time_hours,power_kw,source") {
        throw ConfigError("power CSV: missing header time_hours,power_kw,source");
    }
    PowerSeries s;
    bool first = true;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string t, v, tag;
        if (!std::getline(ss, t, ',') || !std::getline(ss, v, ',') || !std::getline(ss, tag)) {
            throw ConfigError("power CSV: malformed row " + std::to_string(row));
        }
        try {
            s.times.push_back(std::stod(t));
            s.values.push_back(std::stod(v));
        } catch (const std::exception&) {
            throw ConfigError("power CSV: non-numeric value in row " + std::to_string(row));
        }
        const SeriesSource src = series_source_from_string(tag);
        if (first) {
            s.source = src;
            first = false;
        } else if (src != s.source) {
            throw ConfigError("power CSV: mixed sources");
        }
    }
    s.validate();
    return s;
}

void write_comparison_csv(std::ostream& out, const PowerSeries& mc, const PowerSeries& pde) {
    out << "time_hours,mc_kw,pde_kw,relative_error\n";
    const double lo = std::max(mc.times.front(), pde.times.front());
    const double hi = std::min(mc.times.back(), pde.times.back());
    const auto times = window_times(mc, lo, hi);
    double mean = 0.0;
    for (double t : times) {
        mean += std::abs(mc.interpolate(t));
    }
    mean = times.empty() ? 0.0 : mean / static_cast<double>(times.size());
    const double floor = 0.01 * mean;
    for (double t : times) {
        const double a = mc.interpolate(t);
        const double b = pde.interpolate(t);
        const double den = std::max(std::abs(a), floor);
        out << Sig6{t} << ',' << Sig6{a} << ',' << Sig6{b} << ',' << Sig6{den > 0.0 ? (b - a) / den : 0.0}
            << '\n';
    }
}

void write_snapshot_csv(std::ostream& out, const PopulationState& snap) {
    out << "load_index,time_hours,mode,x1,x2\n";
    for (std::size_t i = 0; i < snap.states.size(); ++i) {
        const auto& s = snap.states[i];
        out << i << ',' << Sig6{snap.time} << ',' << s.mode << ',' << Sig6{s.x(0)} << ','
            << Sig6{s.x.size() > 1 ? s.x(1) : 0.0} << '\n';
    }
}

nlohmann::json to_json(const std::vector<ClusterLog>& logs) {
    nlohmann::json ml = nlohmann::json::array();
    for (const auto& l : logs) {
        ml.push_back({{"weight", l.weight},
                      {"max_mass_error", l.max_mass_error},
                      {"escaped", l.escaped},
                      {"clipped", l.clipped},
                      {"max_balance_residual", l.max_balance_residual},
                      {"dt", l.dt},
                      {"steps", l.steps},
                      {"within_tolerance", l.within_tolerance}});
    }
    return ml;
}

std::vector<ClusterLog> cluster_logs_from_json(const nlohmann::json& j) {
    if (!j.is_array()) {
        throw ConfigError("mass_log: must be an array");
    }
    std::vector<ClusterLog> out;
    try {
        for (const auto& e : j) {
            ClusterLog l;
            l.weight = e.at("weight").get<double>();
            l.max_mass_error = e.at("max_mass_error").get<double>();
            l.escaped = e.at("escaped").get<double>();
            l.clipped = e.at("clipped").get<double>();
            l.max_balance_residual = e.at("max_balance_residual").get<double>();
            l.dt = e.at("dt").get<double>();
            l.steps = e.at("steps").get<std::size_t>();
            l.within_tolerance = e.at("within_tolerance").get<bool>();
            out.push_back(l);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mass_log: ") + e.what());
    }
    return out;
}

nlohmann::json to_json(const ComparisonReport& r) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) {
            return v;
        }
        return nullptr;
    };
    nlohmann::json j;
    j["window"] = {r.window_start, r.window_end};
    j["rms_relative_error"] = r.rms_relative_error;
    j["max_relative_error"] = r.max_relative_error;
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : r.events) {
        ev.push_back({{"time", e.time},
                      {"mc_settled_kw", e.mc_settled},
                      {"pde_settled_kw", e.pde_settled},
                      {"mc_period_hours", e.mc_period ? nlohmann::json(*e.mc_period) : nlohmann::json(nullptr)},
                      {"pde_period_hours", e.pde_period ? nlohmann::json(*e.pde_period) : nlohmann::json(nullptr)}});
    }
    j["events"] = ev;
    j["mass_log"] = to_json(r.mass_log);
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : r.metrics) {
        m[k] = num(v);
    }
    j["metrics"] = m;
    nlohmann::json ch = nlohmann::json::array();
    for (const auto& c : r.checks) {
        ch.push_back({{"name", c.name}, {"value", num(c.value)}, {"limit", c.limit}, {"passed", c.passed}});
    }
    j["checks"] = ch;
    j["passed"] = r.passed();
    return j;
}

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + p.string());
    }
    out << content;
}

}  // namespace

void write_outputs(const std::filesystem::path& dir, const ScenarioConfig& config,
                   const ScenarioResult& result) {
    std::filesystem::create_directories(dir);
    std::ostringstream mc, pde, cmp;
    write_power_csv(mc, result.mc.result.power);
    write_power_csv(pde, result.pde.power);
    write_comparison_csv(cmp, result.mc.result.power, result.pde.power);
    write_file(dir / "power_mc.csv", mc.str());
    write_file(dir / "power_pde.csv", pde.str());
    write_file(dir / "comparison.csv", cmp.str());
    write_file(dir / "clusters.json",
               to_json(result.pde.clustering.clusters, result.pde.clustering.representatives)
                       .dump(2) +
                   "\n");
    nlohmann::json report = to_json(result.report);
    report["scenario"] = to_string(config.kind);
    report["config"] = to_json(config);
    write_file(dir / "report.json", report.dump(2) + "\n");
}

std::vector<std::string> verify_outputs(const std::filesystem::path& dir) {
    // Checks whatever a subcommand wrote; at least one known file must exist.
    std::vector<std::string> failures;
    bool any = false;
    auto check_series = [&](const char* name, SeriesSource expected) {
        std::ifstream in(dir / name);
        if (!in) {
            return;
        }
        any = true;
        try {
            const PowerSeries s = read_power_csv(in);
            if (s.source != expected) {
                failures.push_back(std::string(name) + ": wrong source tag");
            }
            for (double v : s.values) {
                if (!std::isfinite(v) || v < -1e-9) {
                    failures.push_back(std::string(name) + ": negative or non-finite power");
                    break;
                }
            }
        } catch (const Error& e) {
            failures.push_back(std::string(name) + ": " + e.what());
        }
    };
    auto load_json = [&](const char* name) -> std::optional<nlohmann::json> {
        std::ifstream in(dir / name);
        if (!in) {
            return std::nullopt;
        }
        any = true;
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            failures.push_back(std::string(name) + ": " + e.what());
            return std::nullopt;
        }
    };
    auto check_logs = [&](const std::string& name, const nlohmann::json& j) {
        try {
            const auto logs = cluster_logs_from_json(j);
            double w = 0.0;
            for (std::size_t i = 0; i < logs.size(); ++i) {
                w += logs[i].weight;
                if (!logs[i].within_tolerance) {
                    failures.push_back(name + ": cluster " + std::to_string(i) +
                                       " outside mass tolerances");
                }
            }
            if (!logs.empty() && std::abs(w - 1.0) > 1e-9) {
                failures.push_back(name + ": cluster weights do not sum to 1");
            }
        } catch (const Error& e) {
            failures.push_back(name + ": " + e.what());
        }
    };

    check_series("power_mc.csv", SeriesSource::MonteCarlo);
    check_series("power_pde.csv", SeriesSource::Pde);
    if (auto j = load_json("clusters.json")) {
        double w = 0.0;
        for (const auto& v : j->value("weights", nlohmann::json::array())) {
            w += v.is_number() ? v.get<double>() : 0.0;
        }
        if (std::abs(w - 1.0) > 1e-9) {
            failures.push_back("clusters.json: weights do not sum to 1");
        }
    }
    if (auto j = load_json("mass_log.json")) {
        check_logs("mass_log.json", *j);
    }
    if (auto j = load_json("report.json")) {
        if (j->contains("mass_log")) {
            check_logs("report.json", j->at("mass_log"));
        }
        for (const auto& c : j->value("checks", nlohmann::json::array())) {
            if (!c.value("passed", false)) {
                failures.push_back("check " + c.value("name", std::string("?")) + " failed");
            }
        }
    }
    if (!any) {
        failures.push_back(dir.string() + ": no outputs found");
    }
    return failures;
}

}  // namespace aggload
