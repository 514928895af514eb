#pragma once

// Finite-volume solver for the coupled forward (Fokker-Planck) equations of a
// stochastic hybrid load: Donor-Cell advection, central-difference diffusion,
// dimensional splitting, explicit jump exchange between modes, and the
// switching-surface boundary conditions (absorbing outflow faces with
// conservative flux hand-off to the successor mode).

#include "aggload/control.hpp"
#include "aggload/grid.hpp"
#include "aggload/model.hpp"
#include "aggload/series.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace aggload {

/// Side index of a box: 2 * axis + (0 for the lower face, 1 for the upper).
[[nodiscard]] constexpr int side_index(int axis, bool upper) { return 2 * axis + (upper ? 1 : 0); }
[[nodiscard]] constexpr int side_axis(int side) { return side / 2; }
[[nodiscard]] constexpr bool side_upper(int side) { return (side % 2) == 1; }

enum class FaceKind {
    Truncation,  // zero-density ghost; outflowing mass is counted as escaped
    Wall,        // zero flux
    Interface,   // shared face with another component of the same mode
    Outflow,     // switching surface G_q, handed to an S face of the successor
};

[[nodiscard]] std::string to_string(FaceKind kind);

struct FaceLink {
    FaceKind kind = FaceKind::Truncation;
    int component = -1;  // Interface: neighbour; Outflow: component holding S
    int side = -1;       // side of `component` that coincides with this face
    int offset = 0;      // Outflow: target transverse index = source index + offset
};

struct Component {
    CellBlock block;
    int label = 1;  // i of X_q^i
    std::array<FaceLink, 4> faces{};
};

struct DomainPartition {
    ModelFamily family = ModelFamily::HvacEtp;
    double control = 0.0;
    std::vector<Component> components;

    [[nodiscard]] std::vector<CellBlock> blocks() const;
    [[nodiscard]] std::vector<int> components_of(Mode q) const;
    /// Throws PartitionError on overlapping components, broken interface or
    /// outflow links, or non-conforming face meshes.
    void validate(const LoadModel& model) const;
};

/// Grid resolution and truncation. HVAC: `cells_x1` cells across each
/// component's x1 span, `cells_x2` across x2, boxes extend `margin` F beyond
/// the outer deadband edges. PEV: one box [pev_lower, pev_upper] cut at the
/// switching surfaces, uniform cells of width pev_cell.
struct GridSpec {
    int cells_x1 = 160;
    int cells_x2 = 120;
    double margin = 6.0;
    std::array<double, 2> pev_lower{-9.0, -0.5};
    std::array<double, 2> pev_upper{4.0, 4.0};
    std::array<double, 2> pev_cell{0.05, 0.05};
};

/// Mode-partitioned domain for the given parameters and control value. For
/// thermostat families the x1 geometry follows the shifted setpoint while the
/// x2 extent stays centred on the unshifted setpoint.
[[nodiscard]] DomainPartition build_partition(const LoadModel& model, const LoadParameters& params,
                                              double control, const GridSpec& grid);

/// Everything about one (model, parameters, partition) that is constant
/// between control events: face velocities, cell diffusion, hazards, jump
/// targets and flux hand-off routes.
class Discretization {
public:
    Discretization(const LoadModel& model, const LoadParameters& params,
                   DomainPartition partition);

    struct Route {
        std::size_t face = 0;  // face index on the source component
        int component = 0;     // receiving component
        std::size_t cell = 0;
        double fraction = 1.0;
    };

    struct ComponentData {
        std::array<std::vector<double>, 2> velocity;  // face-normal drift per axis
        std::array<std::vector<double>, 2> diffusion;  // Sigma_aa per cell
        std::array<bool, 2> diffusive{false, false};
        std::vector<double> hazard;                    // per cell
        std::vector<int> jump_component;               // per cell, -1 if no hazard
        std::vector<std::size_t> jump_cell;
        std::array<std::vector<Route>, 4> routes;  // per outflow side
    };

    [[nodiscard]] const DomainPartition& partition() const noexcept { return partition_; }
    [[nodiscard]] const ComponentData& data(std::size_t c) const { return data_[c]; }
    [[nodiscard]] const LoadModel& model() const noexcept { return *model_; }
    [[nodiscard]] const LoadParameters& params() const noexcept { return params_; }
    [[nodiscard]] bool has_jumps() const noexcept { return has_jumps_; }
    [[nodiscard]] double max_hazard() const noexcept { return max_hazard_; }
    [[nodiscard]] double cfl_limit() const noexcept { return cfl_; }

private:
    [[nodiscard]] double compute_cfl() const;

    const LoadModel* model_;
    LoadParameters params_;
    DomainPartition partition_;
    std::vector<ComponentData> data_;
    bool has_jumps_ = false;
    double max_hazard_ = 0.0;
    double cfl_ = 0.0;
};

/// Face-centred probability flux gamma . e_axis (positive towards +x_axis),
/// per component and axis. Face (i, j) along axis 0 sits at index
/// i + (cells0 + 1) * j; along axis 1 at i + cells0 * j.
struct FluxField {
    std::array<std::vector<std::vector<double>>, 2> faces;
};

[[nodiscard]] FluxField compute_flux(const DensityField& p, const Discretization& disc);

/// Mass bookkeeping of one boundary application.
struct BoundaryReport {
    double outflow = 0.0;   // mass leaving through G faces
    double injected = 0.0;  // mass deposited on S faces
    double escaped = 0.0;   // mass through truncation faces
    [[nodiscard]] double residual() const { return outflow - injected; }
};

/// One conservative sweep along `axis` over component-interior cells using
/// the fluxes in `flux` (boundary faces included as cell fluxes).
void apply_sweep(DensityField& p, const FluxField& flux, const Discretization& disc, int axis,
                 double dt);

/// Hand-off of the outflow through every G face on `axis` to its S face, and
/// truncation accounting. Throws ConservationError if the discrete balance
/// misses by more than `balance_tolerance`.
BoundaryReport apply_boundary(DensityField& p, const FluxField& flux, const Discretization& disc,
                              int axis, double dt, double balance_tolerance = 1e-10);

/// Both sweeps (order x1, x2 when `reverse` is false) with boundary handling.
/// Throws CflError when dt exceeds cfl_dt.
BoundaryReport advect_diffuse_step(DensityField& p, const Discretization& disc, double dt,
                                   bool reverse = false, double balance_tolerance = 1e-10);

/// Explicit Euler transfer of lambda p dt from each cell to the identical
/// cell of the successor mode. Throws CflError when lambda dt >= 0.5.
void jump_exchange_step(DensityField& p, const Discretization& disc, double dt);

/// 0.9 * min over cells and axes of min(dx/|f|, dx^2/(2 Sigma)), capped by
/// 0.5 / lambda_max.
[[nodiscard]] double cfl_dt(const Discretization& disc);

/// Step used by the solver when none is given: 0.9 / max(|f|/dx + 2 Sigma/dx^2)
/// per axis, which also keeps every sweep monotone; capped like cfl_dt.
[[nodiscard]] double stable_dt(const Discretization& disc);

[[nodiscard]] double total_mass(const DensityField& p);
/// Expected output of one load times N: N * sum_q h(q) * mass(q).
[[nodiscard]] double aggregated_power(const DensityField& p, const LoadModel& model,
                                      const LoadParameters& params, double population = 1.0);

/// Mode-q masses of p moved onto `target` by exact cell-overlap areas. Mass
/// outside every mode-q component goes to the successor mode at the same
/// location; whatever is still uncovered is returned as escaped.
double remap_density(const DensityField& p, const DomainPartition& from, DensityField& target,
                     const DomainPartition& to, const LoadModel& model);

/// Density with `mass_per_mode[q]` spread uniformly over `region` in mode q.
/// Throws PartitionError if the partition does not cover the region.
[[nodiscard]] DensityField uniform_density(const DomainPartition& partition,
                                           const std::vector<double>& mass_per_mode,
                                           const Box& region);

struct PdeOptions {
    double start = 0.0;
    double end = 1.0;  // absolute end time, hours
    double dt = 0.0;   // 0 selects stable_dt
    double output_interval = 0.01;
    double mass_tolerance = 1e-3;
    double escape_tolerance = 1e-6;
    double clip_tolerance = 1e-6;
    double balance_tolerance = 1e-10;
    bool enable_jumps = true;
    std::vector<double> snapshot_times;

    void validate() const;
};

struct PdeResult {
    PowerSeries power;        // expected output of one load, kW
    PowerSeries active_mass;  // mass of the modes with positive output
    std::vector<double> total_mass;  // at each output time
    std::vector<std::vector<double>> mode_mass;  // [output index][mode position]
    std::vector<DensityField> snapshots;
    DomainPartition final_partition;
    double max_mass_error = 0.0;
    double escaped = 0.0;
    double clipped = 0.0;
    double max_balance_residual = 0.0;
    double dt = 0.0;
    std::size_t steps = 0;

    [[nodiscard]] bool within_tolerance(const PdeOptions& options) const;
};

/// Advances `init` (laid out on build_partition(model, params,
/// control.value_at(start), grid)) to options.end. At every control event the
/// partition is rebuilt and the density remapped. Throws ConservationError when
/// |mass - 1| exceeds options.mass_tolerance.
[[nodiscard]] PdeResult solve(const LoadModel& model, const LoadParameters& params,
                              const DensityField& init, const ControlSchedule& control,
                              const GridSpec& grid, const PdeOptions& options);

/// CSV with header `mode,component,x1,x2,p`, one row per cell.
void write_density_csv(std::ostream& out, const DensityField& p, const DomainPartition& partition);
[[nodiscard]] nlohmann::json to_json(const DomainPartition& partition);
[[nodiscard]] nlohmann::json to_json(const GridSpec& grid);
[[nodiscard]] GridSpec grid_spec_from_json(const nlohmann::json& j);

}  // namespace aggload
