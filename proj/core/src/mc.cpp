#include "aggload/mc.hpp"

#include "aggload/errors.hpp"
#include "aggload/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace aggload {

void SimulationOptions::validate() const {
    if (!(horizon > start)) {
        throw ConfigError("simulation: horizon must exceed the start time");
    }
    if (!(dt > 0.0)) {
        throw ConfigError("simulation: dt must be positive");
    }
    if (!(output_interval > 0.0)) {
        throw ConfigError("simulation: output_interval must be positive");
    }
    if (!(zeno_epsilon >= 0.0)) {
        throw ConfigError("simulation: zeno_epsilon must be nonnegative");
    }
}

StateVector step_euler_maruyama(const HybridState& state, const LoadModel& model,
                                std::span<const double> theta, double dt,
                                std::span<const double> noise, long load_index, double time) {
    if (!(dt > 0.0)) {
        throw ModelError("Euler-Maruyama step needs dt > 0");
    }
    StateVector next = state.x + model.drift(state.mode, state.x, theta) * dt;
    if (!noise.empty()) {
        const NoiseMatrix s = model.sigma(state.mode, state.x, theta);
        if (static_cast<std::size_t>(s.cols()) != noise.size()) {
            throw ModelError("noise vector length does not match the diffusion matrix");
        }
        const double sq = std::sqrt(dt);
        for (Eigen::Index c = 0; c < s.cols(); ++c) {
            next += s.col(c) * (sq * noise[static_cast<std::size_t>(c)]);
        }
    }
    if (!next.allFinite()) {
        std::ostringstream msg;
        msg << "numerical blow-up in Euler-Maruyama step (load " << load_index << ", t = " << time
            << " h)";
        throw NumericalBlowupError(msg.str());
    }
    return next;
}

std::optional<double> crossing_fraction(double guard_prev, double guard_next) {
    if (guard_next > 0.0) {
        return std::nullopt;
    }
    if (!(guard_prev > 0.0)) {
        return 0.0;
    }
    const double rho = guard_prev / (guard_prev - guard_next);
    return std::clamp(rho, std::numeric_limits<double>::min(), 1.0);
}

std::optional<double> locate_crossing(const HybridState& prev, const StateVector& next_candidate,
                                      const LoadModel& model, double control,
                                      std::span<const double> alpha) {
    if (model.is_terminal(prev.mode)) {
        return std::nullopt;
    }
    const double g0 = model.guard(prev.mode, prev.x, control, alpha);
    const double g1 = model.guard(prev.mode, next_candidate, control, alpha);
    return crossing_fraction(g0, g1);
}

bool sample_random_jump(const HybridState& state, const LoadModel& model, double dt, double u,
                        double control, std::span<const double> alpha) {
    const double rate = model.hazard(state.mode, state.x, control, alpha);
    if (rate == 0.0) {
        return false;
    }
    return u < -std::expm1(-rate * dt);
}

namespace {

/// Integrates one load over [options.start, options.horizon] and reports the
/// state at each observation time and every jump to `sink`.
template <typename Sink>
void run_load(const LoadModel& model, const LoadParameters& params, const HybridState& init,
              const SimulationOptions& options, const ControlSchedule& control,
              std::span<const double> observe, RandomStream& rng, long load_index, Sink& sink) {
    const std::span<const double> theta(params.theta);
    const std::span<const double> alpha(params.alpha);
    HybridState s = init;
    model.require_mode(s.mode);
    if (s.x.size() != model.dim()) {
        throw ModelError("initial state has the wrong continuous dimension");
    }
    double t = options.start;
    double u = control.value_at(t);
    double last_jump = -std::numeric_limits<double>::infinity();
    const double zeno = options.zeno_epsilon;

    auto jump_to = [&](Mode to, JumpKind kind) {
        if (t - last_jump < zeno) {
            std::ostringstream msg;
            msg << "Zeno guard violated: two jumps within " << zeno << " h (load " << load_index
                << ", t = " << t << " h)";
            throw ZenoError(msg.str());
        }
        sink.jump(JumpRecord{t, kind, s.mode, to});
        s.mode = to;
        last_jump = t;
    };
    // Domain-membership rule: a state outside its mode's domain switches now.
    auto enforce_domain = [&] {
        while (!model.in_domain(s.mode, s.x, u, alpha)) {
            jump_to(*model.postjump_of(s.mode), JumpKind::Deterministic);
        }
    };
    enforce_domain();

    std::size_t next_obs = 0;
    while (next_obs < observe.size() && observe[next_obs] < t) {
        ++next_obs;
    }
    auto flush_observations = [&] {
        while (next_obs < observe.size() && observe[next_obs] <= t) {
            sink.observe(next_obs, t, s);
            ++next_obs;
        }
    };
    flush_observations();

    const auto noise_dim = static_cast<std::size_t>(model.noise_dim());
    std::array<double, kMaxDim> noise_buf{};
    const bool noisy = !model.sigma(s.mode, s.x, theta).isZero(0.0);
    double next_event = control.next_change_after(t);

    while (t < options.horizon) {
        double t_stop = std::min(t + options.dt, options.horizon);
        t_stop = std::min(t_stop, next_event);
        if (next_obs < observe.size()) {
            t_stop = std::min(t_stop, observe[next_obs]);
        }
        const double h = t_stop - t;
        std::span<const double> noise;
        if (noisy) {
            for (std::size_t k = 0; k < noise_dim; ++k) {
                noise_buf[k] = rng.normal();
            }
            noise = std::span<const double>(noise_buf.data(), noise_dim);
        }
        const StateVector candidate =
            step_euler_maruyama(s, model, theta, h, noise, load_index, t);

        std::optional<double> random_at;
        if (sample_random_jump(s, model, h, rng.uniform(), u, alpha)) {
            random_at = rng.uniform();
        }
        const std::optional<double> cross_at = locate_crossing(s, candidate, model, u, alpha);

        if (random_at || cross_at) {
            const bool random_first = random_at && (!cross_at || *random_at < *cross_at);
            const double rho = random_first ? *random_at : *cross_at;
            s.x = s.x + rho * (candidate - s.x);
            t = rho >= 1.0 ? t_stop : t + rho * h;
            jump_to(*model.postjump_of(s.mode),
                    random_first ? JumpKind::Random : JumpKind::Deterministic);
            enforce_domain();
        } else {
            s.x = candidate;
            t = t_stop;
        }
        if (t == next_event) {
            u = control.value_at(t);
            next_event = control.next_change_after(t);
            enforce_domain();
        }
        flush_observations();
    }
}

struct TrajectorySink {
    Trajectory* out;
    void jump(const JumpRecord& r) { out->jumps.push_back(r); }
    void observe(std::size_t, double t, const HybridState& s) {
        out->times.push_back(t);
        out->states.push_back(s);
    }
};

struct PopulationSink {
    const LoadModel* model;
    std::span<const double> theta;
    const std::vector<std::pair<double, std::size_t>>* slots;  // merged observation -> slot
    std::size_t n_outputs;
    double* power;                     // n_outputs accumulators
    double* occupancy;                 // n_outputs x modes counters
    std::vector<HybridState>* snapshots;  // one per snapshot time
    std::size_t jumps = 0;
    void jump(const JumpRecord&) { ++jumps; }
    void observe(std::size_t k, double, const HybridState& s) {
        const std::size_t slot = (*slots)[k].second;
        if (slot < n_outputs) {
            power[slot] += model->output(s.mode, theta);
            const auto& modes = model->modes();
            const auto pos = static_cast<std::size_t>(
                std::find(modes.begin(), modes.end(), s.mode) - modes.begin());
            occupancy[slot * modes.size() + pos] += 1.0;
        } else {
            (*snapshots)[slot - n_outputs] = s;
        }
    }
};

}  // namespace

Trajectory simulate_trajectory(const LoadModel& model, const LoadParameters& params,
                               const HybridState& init, const SimulationOptions& options,
                               const ControlSchedule& control, RandomStream& rng) {
    options.validate();
    const auto times = uniform_times(options.start, options.horizon, options.output_interval);
    Trajectory traj;
    TrajectorySink sink{&traj};
    run_load(model, params, init, options, control, times, rng, 0, sink);
    return traj;
}

PopulationResult simulate_population(const LoadModel& model, std::span<const LoadParameters> params,
                                     std::span<const HybridState> inits,
                                     const SimulationOptions& options,
                                     const ControlSchedule& control, std::uint64_t seed,
                                     std::span<const double> snapshot_times) {
    options.validate();
    if (params.empty() || params.size() != inits.size()) {
        throw ConfigError("population: parameter and initial-state lists must be non-empty and "
                          "of equal length");
    }
    const auto out_times = uniform_times(options.start, options.horizon, options.output_interval);
    const std::size_t n_out = out_times.size();
    // Observation list: output grid followed by snapshot times; run_load needs
    // them sorted, so merge and remember where each one goes.
    std::vector<std::pair<double, std::size_t>> merged;
    merged.reserve(n_out + snapshot_times.size());
    for (std::size_t k = 0; k < n_out; ++k) {
        merged.emplace_back(out_times[k], k);
    }
    for (std::size_t k = 0; k < snapshot_times.size(); ++k) {
        merged.emplace_back(snapshot_times[k], n_out + k);
    }
    std::stable_sort(merged.begin(), merged.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<double> obs_times(merged.size());
    for (std::size_t k = 0; k < merged.size(); ++k) {
        obs_times[k] = merged[k].first;
    }

    // Fixed-size blocks summed in block order keep the reduction independent
    // of the thread count.
    constexpr std::size_t kBlock = 64;
    const std::size_t n = params.size();
    const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
    const std::size_t n_modes = model.modes().size();
    std::vector<std::vector<double>> block_power(n_blocks, std::vector<double>(n_out, 0.0));
    std::vector<std::vector<double>> block_occ(n_blocks, std::vector<double>(n_out * n_modes, 0.0));
    std::vector<std::vector<HybridState>> load_snaps(n);
    std::vector<std::size_t> block_jumps(n_blocks, 0);

    parallel_for(n_blocks, options.threads, [&](std::size_t b) {
        for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) {
            load_snaps[i].resize(snapshot_times.size());
            PopulationSink sink{&model, params[i].theta, &merged, n_out,
                                block_power[b].data(), block_occ[b].data(), &load_snaps[i]};
            RandomStream rng(seed, i);
            run_load(model, params[i], inits[i], options, control, obs_times, rng,
                     static_cast<long>(i), sink);
            block_jumps[b] += sink.jumps;
        }
    });

    PopulationResult result;
    result.power.times = out_times;
    result.power.values.assign(n_out, 0.0);
    result.mode_fraction.assign(n_out, std::vector<double>(n_modes, 0.0));
    for (std::size_t b = 0; b < n_blocks; ++b) {
        for (std::size_t k = 0; k < n_out; ++k) {
            result.power.values[k] += block_power[b][k];
            for (std::size_t m = 0; m < n_modes; ++m) {
                result.mode_fraction[k][m] += block_occ[b][k * n_modes + m];
            }
        }
        result.total_jumps += block_jumps[b];
    }
    result.power.source = SeriesSource::MonteCarlo;
    result.power.metadata["loads"] = std::to_string(n);
    result.power.metadata["seed"] = std::to_string(seed);
    result.mean_jumps_per_load = static_cast<double>(result.total_jumps) / static_cast<double>(n);
    for (auto& row : result.mode_fraction) {
        for (double& v : row) {
            v /= static_cast<double>(n);
        }
    }
    result.snapshots.resize(snapshot_times.size());
    for (std::size_t k = 0; k < snapshot_times.size(); ++k) {
        auto& snap = result.snapshots[k];
        snap.time = snapshot_times[k];
        snap.rng_seed = seed;
        snap.params.assign(params.begin(), params.end());
        snap.states.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            snap.states.push_back(load_snaps[i][k]);
        }
    }
    return result;
}

EmpiricalDensity empirical_density(const PopulationState& snapshot,
                                   const std::vector<CellBlock>& blocks) {
    EmpiricalDensity out{DensityField::zeros(blocks, snapshot.time), 0};
    std::size_t inside = 0;
    for (const auto& s : snapshot.states) {
        bool placed = false;
        for (std::size_t b = 0; b < blocks.size() && !placed; ++b) {
            if (blocks[b].mode != s.mode) {
                continue;
            }
            if (auto cell = blocks[b].locate(s.x)) {
                out.field.values[b][*cell] += 1.0;
                placed = true;
            }
        }
        if (placed) {
            ++inside;
        } else {
            ++out.overflow;
        }
    }
    if (inside > 0) {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const double scale = 1.0 / (static_cast<double>(inside) * blocks[b].cell_volume());
            for (double& v : out.field.values[b]) {
                v *= scale;
            }
        }
    }
    return out;
}

}  // namespace aggload
