#pragma once

// Monte Carlo simulation of a load population: Euler-Maruyama between jumps,
// deterministic switching at located guard crossings, hazard-driven random
// jumps, and the aggregated power output.

#include "aggload/control.hpp"
#include "aggload/grid.hpp"
#include "aggload/model.hpp"
#include "aggload/random.hpp"
#include "aggload/series.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace aggload {

enum class JumpKind { Deterministic, Random };

struct JumpRecord {
    double time = 0.0;
    JumpKind kind = JumpKind::Deterministic;
    Mode from = 0;
    Mode to = 0;
};

/// Samples at the observation times plus every jump in order.
struct Trajectory {
    std::vector<double> times;
    std::vector<HybridState> states;
    std::vector<JumpRecord> jumps;
};

struct PopulationState {
    std::vector<HybridState> states;
    std::vector<LoadParameters> params;
    std::uint64_t rng_seed = 0;
    double time = 0.0;
};

struct SimulationOptions {
    double start = 0.0;
    double horizon = 1.0;  // absolute end time, hours
    double dt = 1e-3;
    double output_interval = 0.01;
    /// Minimum separation of two jumps of one load (hours).
    double zeno_epsilon = 1e-12;
    /// Worker threads for population runs; 0 = hardware concurrency.
    unsigned threads = 1;

    void validate() const;
};

/// Candidate next continuous state x + f dt + sigma sqrt(dt) noise.
/// Throws NumericalBlowupError (naming load index and time) on non-finite
/// output.
[[nodiscard]] StateVector step_euler_maruyama(const HybridState& state, const LoadModel& model,
                                              std::span<const double> theta, double dt,
                                              std::span<const double> noise,
                                              long load_index = -1, double time = 0.0);

/// Fraction rho in (0, 1] where the linearly interpolated guard reaches zero,
/// or nullopt when the guard stays positive.
[[nodiscard]] std::optional<double> crossing_fraction(double guard_prev, double guard_next);

[[nodiscard]] std::optional<double> locate_crossing(const HybridState& prev,
                                                    const StateVector& next_candidate,
                                                    const LoadModel& model, double control,
                                                    std::span<const double> alpha);

/// True with probability 1 - exp(-lambda dt) given the uniform draw u.
[[nodiscard]] bool sample_random_jump(const HybridState& state, const LoadModel& model, double dt,
                                      double u, double control, std::span<const double> alpha);

[[nodiscard]] Trajectory simulate_trajectory(const LoadModel& model, const LoadParameters& params,
                                             const HybridState& init,
                                             const SimulationOptions& options,
                                             const ControlSchedule& control, RandomStream& rng);

struct PopulationResult {
    PowerSeries power;
    std::vector<std::vector<double>> mode_fraction;  // [output index][mode position]
    std::vector<PopulationState> snapshots;
    std::size_t total_jumps = 0;
    double mean_jumps_per_load = 0.0;
};

/// Simulates every load on its own stream (seed, load index) and sums the
/// outputs in load-index order. Results do not depend on `options.threads`.
[[nodiscard]] PopulationResult simulate_population(const LoadModel& model,
                                                   std::span<const LoadParameters> params,
                                                   std::span<const HybridState> inits,
                                                   const SimulationOptions& options,
                                                   const ControlSchedule& control,
                                                   std::uint64_t seed,
                                                   std::span<const double> snapshot_times = {});

struct EmpiricalDensity {
    DensityField field;
    std::size_t overflow = 0;  // loads outside every block of their mode
};

/// Histogram of a snapshot on `blocks`, normalized to unit total mass over
/// the in-grid loads.
[[nodiscard]] EmpiricalDensity empirical_density(const PopulationState& snapshot,
                                                 const std::vector<CellBlock>& blocks);

}  // namespace aggload
