#pragma once

// Hybrid-system abstraction of a single responsive load and the shipped
// model families: HVAC equivalent-thermal-parameter (ETP) thermostat loads,
// PEV charging jobs, and price-responsive HVAC.

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aggload {

inline constexpr int kMaxDim = 2;

using Mode = int;
using StateVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using NoiseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// One load's instantaneous condition: discrete mode plus continuous state.
struct HybridState {
    Mode mode = 0;
    StateVector x;
};

/// Per-load parameters. `theta` holds physical constants, `alpha` the control
/// parameters that only move switching surfaces. Layouts are family specific
/// (see the `*Layout` namespaces below).
struct LoadParameters {
    std::vector<double> theta;
    std::vector<double> alpha;

    bool operator==(const LoadParameters&) const = default;
};

/// sigma (n x m) together with Sigma = sigma * sigma^T (n x n).
struct DiffusionMatrix {
    NoiseMatrix sigma;
    NoiseMatrix big_sigma;
};

enum class ModelFamily { HvacEtp, PriceResponsiveHvac, Pev };

[[nodiscard]] std::string to_string(ModelFamily family);

namespace hvac_layout {
// theta: A (row major, 4), B_off (2), B_on (2), rated power kW, noise sigma0
inline constexpr std::size_t kA00 = 0, kA01 = 1, kA10 = 2, kA11 = 3;
inline constexpr std::size_t kBOff0 = 4, kBOff1 = 5, kBOn0 = 6, kBOn1 = 7;
inline constexpr std::size_t kPower = 8, kSigma = 9;
inline constexpr std::size_t kThetaSize = 10;
// alpha: setpoint (F), deadband half-width (F)
inline constexpr std::size_t kSetpoint = 0, kDeadband = 1;
inline constexpr std::size_t kAlphaSize = 2;
inline constexpr Mode kOff = 0;
inline constexpr Mode kOn = 1;
}  // namespace hvac_layout

namespace pev_layout {
inline constexpr std::size_t kChargeRate = 0;
inline constexpr std::size_t kThetaSize = 1;
// alpha: nominal deferral budget (hours) granted to a newly plugged-in job
inline constexpr std::size_t kDeadlineSlack = 0;
inline constexpr std::size_t kAlphaSize = 1;
inline constexpr Mode kWaiting = 0;
inline constexpr Mode kCharging = 1;
inline constexpr Mode kCompleted = 2;
}  // namespace pev_layout

/// Dynamics specification shared by every load of one family. All callables
/// are pure; a LoadModel is immutable once built and safe to share across
/// threads. Per-load values enter through `theta` / `alpha`.
class LoadModel {
public:
    using ParamSpan = std::span<const double>;
    using DriftFn = std::function<StateVector(Mode, const StateVector&, ParamSpan theta)>;
    using SigmaFn = std::function<NoiseMatrix(Mode, const StateVector&, ParamSpan theta)>;
    /// Positive strictly inside X_q, zero on its boundary, negative outside.
    using GuardFn =
        std::function<double(Mode, const StateVector&, double control, ParamSpan alpha)>;
    using HazardFn = std::function<double(Mode, const StateVector&)>;
    using OutputFn = std::function<double(Mode, ParamSpan theta)>;

    struct Definition {
        ModelFamily family = ModelFamily::HvacEtp;
        std::vector<Mode> modes;
        int dim = 2;
        int noise_dim = 1;
        std::size_t theta_size = 0;
        std::size_t alpha_size = 0;
        DriftFn drift;
        SigmaFn sigma;
        GuardFn guard;
        HazardFn hazard;
        OutputFn output;
        std::vector<std::optional<Mode>> successor;    // indexed by mode position
        std::vector<std::optional<Mode>> predecessor;  // indexed by mode position
        std::function<double(double)> setpoint_shift;  // thermostat families only
        LoadParameters nominal;
    };

    explicit LoadModel(Definition def);

    [[nodiscard]] ModelFamily family() const noexcept { return def_.family; }
    [[nodiscard]] const std::vector<Mode>& modes() const noexcept { return def_.modes; }
    [[nodiscard]] int dim() const noexcept { return def_.dim; }
    [[nodiscard]] int noise_dim() const noexcept { return def_.noise_dim; }
    [[nodiscard]] std::size_t theta_size() const noexcept { return def_.theta_size; }
    [[nodiscard]] std::size_t alpha_size() const noexcept { return def_.alpha_size; }
    [[nodiscard]] const LoadParameters& nominal() const noexcept { return def_.nominal; }

    [[nodiscard]] bool has_mode(Mode q) const noexcept;
    void require_mode(Mode q) const;

    [[nodiscard]] StateVector drift(Mode q, const StateVector& x, ParamSpan theta) const;
    [[nodiscard]] NoiseMatrix sigma(Mode q, const StateVector& x, ParamSpan theta) const;
    [[nodiscard]] DiffusionMatrix diffusion(Mode q, const StateVector& x, ParamSpan theta) const;
    [[nodiscard]] double guard(Mode q, const StateVector& x, double control, ParamSpan alpha) const;

    /// Successor mode at a guard-zero (or outside) point, otherwise `q`.
    /// The continuous state is never reset.
    [[nodiscard]] Mode transition(Mode q, const StateVector& x, double control,
                                  ParamSpan alpha) const;

    /// Raw per-mode transition rate (per hour), checked nonnegative.
    [[nodiscard]] double raw_hazard(Mode q, const StateVector& x) const;

    /// Rate of random jumps that land inside the successor's domain; zero where
    /// the successor domain does not contain x or q has no successor.
    [[nodiscard]] double hazard(Mode q, const StateVector& x, double control,
                                ParamSpan alpha) const;

    [[nodiscard]] double output(Mode q, ParamSpan theta) const;

    [[nodiscard]] std::optional<Mode> postjump_of(Mode q) const;
    [[nodiscard]] std::optional<Mode> prejump_of(Mode q) const;

    /// Terminal modes have no successor; their guard is never enforced.
    [[nodiscard]] bool is_terminal(Mode q) const { return !postjump_of(q).has_value(); }

    /// x inside the continuous domain of q under `control` (terminal modes
    /// accept every x).
    [[nodiscard]] bool in_domain(Mode q, const StateVector& x, double control,
                                 ParamSpan alpha) const;

    /// Setpoint change (F) produced by a control value; identity for the plain
    /// HVAC family, the saturated linear rule for price-responsive HVAC.
    [[nodiscard]] double setpoint_shift(double control) const;
    [[nodiscard]] bool is_thermostat() const noexcept {
        return def_.family == ModelFamily::HvacEtp ||
               def_.family == ModelFamily::PriceResponsiveHvac;
    }

    [[nodiscard]] const Definition& definition() const noexcept { return def_; }

private:
    [[nodiscard]] std::size_t index_of(Mode q) const;

    Definition def_;
};

// ---------------------------------------------------------------------------
// HVAC ETP family
// ---------------------------------------------------------------------------

/// Equivalent thermal parameter model x' = A x + B_q with a thermostat
/// deadband [setpoint - deadband, setpoint + deadband]. x = (air, mass) in F.
struct EtpParameters {
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    Eigen::Vector2d b_off = Eigen::Vector2d::Zero();
    Eigen::Vector2d b_on = Eigen::Vector2d::Zero();
    double setpoint = 74.0;
    double deadband = 1.0;
    double power_kw = 3.0;
    double noise_sigma = 0.0;
    /// Constant random switching rate per mode (OFF, ON), per hour.
    std::array<double, 2> hazard{0.0, 0.0};
};

/// Physical description of one house, in GridLAB-D style units
/// (Btu, F, hours).
struct HouseParameters {
    double air_heat_capacity = 3000.0;     // C_a, Btu/F
    double mass_heat_capacity = 6000.0;    // C_m, Btu/F
    double envelope_conductance = 1500.0;  // U_a, Btu/(h F)
    double mass_conductance = 12000.0;     // H_m, Btu/(h F)
    double internal_gain = 3000.0;         // Q_a, Btu/h into the air node
    double mass_gain = 0.0;                // Q_m, Btu/h into the mass node
    double cooling_capacity = 36000.0;     // Q_hvac, Btu/h removed while ON
    double cop = 3.5;
    double outdoor_temperature = 84.0;
    double setpoint = 74.0;
    double deadband = 1.0;
};

/// Nominal house values and the uniform relative spread applied to the
/// heterogeneous coordinates when sampling a population.
struct HousePrior {
    HouseParameters nominal;
    double relative_spread = 0.2;
    double setpoint_min = 70.0;
    double setpoint_max = 78.0;
    /// Cooling capacity = sizing_factor * design load at `design_indoor`.
    double sizing_factor = 1.5;
    double design_indoor = 70.0;

    [[nodiscard]] double sized_capacity(const HouseParameters& h) const {
        return sizing_factor *
               (h.envelope_conductance * (h.outdoor_temperature - design_indoor) +
                h.internal_gain);
    }
};

[[nodiscard]] HousePrior default_house_prior();

inline constexpr double kBtuPerKwh = 3412.14;

/// ETP matrices from physical house parameters.
[[nodiscard]] EtpParameters etp_from_house(const HouseParameters& house, double noise_sigma = 0.0,
                                           std::array<double, 2> hazard = {0.0, 0.0});

/// Default ETP parameter set (nominal house of default_house_prior()).
[[nodiscard]] EtpParameters default_etp_parameters();

[[nodiscard]] LoadParameters pack(const EtpParameters& p);
[[nodiscard]] EtpParameters unpack_etp(const LoadParameters& p);

/// Throws ModelError unless deadband > 0 and A is strictly dissipative
/// (all eigenvalues with negative real part).
void validate_etp(const EtpParameters& p);

[[nodiscard]] LoadModel make_hvac_etp(const EtpParameters& params);

/// Saturated linear price response: a*v for |v| <= b, a*b*sign(v) otherwise.
[[nodiscard]] double saturated_setpoint_shift(double price_deviation, double slope, double bound);

[[nodiscard]] LoadModel make_price_responsive(const LoadModel& base, double slope, double bound);

// ---------------------------------------------------------------------------
// PEV charging family
// ---------------------------------------------------------------------------

/// Modes: 0 waiting, 1 charging, 2 completed. x = (remaining charge time,
/// remaining deferral time), both in hours.
[[nodiscard]] LoadModel make_pev(double charge_rate_kw, double deadline_slack_hours = 0.0,
                                 std::array<double, 2> hazard = {0.0, 0.0});

// ---------------------------------------------------------------------------
// Accessor surface
// ---------------------------------------------------------------------------

[[nodiscard]] StateVector evaluate_drift(const LoadModel& model, const HybridState& state,
                                         std::span<const double> theta);
[[nodiscard]] NoiseMatrix evaluate_big_sigma(const LoadModel& model, const HybridState& state,
                                             std::span<const double> theta);
[[nodiscard]] double evaluate_output(const LoadModel& model, Mode mode,
                                     std::span<const double> theta);

[[nodiscard]] StateVector make_state(std::initializer_list<double> values);

}  // namespace aggload
