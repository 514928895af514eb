#include "aggload/model.hpp"

#include "aggload/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace aggload {

std::string to_string(ModelFamily family) {
    switch (family) {
        case ModelFamily::HvacEtp:
            return "hvac";
        case ModelFamily::PriceResponsiveHvac:
            return "price_responsive_hvac";
        case ModelFamily::Pev:
            return "pev";
    }
    return "unknown";
}

LoadModel::LoadModel(Definition def) : def_(std::move(def)) {
    if (def_.modes.empty()) {
        throw ModelError("model must declare at least one mode");
    }
    if (def_.dim < 1 || def_.dim > kMaxDim) {
        throw ModelError("continuous dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    }
    if (def_.successor.size() != def_.modes.size() ||
        def_.predecessor.size() != def_.modes.size()) {
        throw ModelError("successor/predecessor tables must cover every mode");
    }
    for (std::size_t i = 0; i < def_.modes.size(); ++i) {
        if (def_.successor[i] && !has_mode(*def_.successor[i])) {
            throw ModelError("successor of mode " + std::to_string(def_.modes[i]) +
                             " is not a declared mode");
        }
    }
}

bool LoadModel::has_mode(Mode q) const noexcept {
    return std::find(def_.modes.begin(), def_.modes.end(), q) != def_.modes.end();
}

std::size_t LoadModel::index_of(Mode q) const {
    auto it = std::find(def_.modes.begin(), def_.modes.end(), q);
    if (it == def_.modes.end()) {
        throw ModelError("mode " + std::to_string(q) + " is not in the model's mode set");
    }
    return static_cast<std::size_t>(it - def_.modes.begin());
}

void LoadModel::require_mode(Mode q) const { (void)index_of(q); }

StateVector LoadModel::drift(Mode q, const StateVector& x, ParamSpan theta) const {
    require_mode(q);
    return def_.drift(q, x, theta);
}

NoiseMatrix LoadModel::sigma(Mode q, const StateVector& x, ParamSpan theta) const {
    require_mode(q);
    return def_.sigma(q, x, theta);
}

DiffusionMatrix LoadModel::diffusion(Mode q, const StateVector& x, ParamSpan theta) const {
    DiffusionMatrix d;
    d.sigma = sigma(q, x, theta);
    d.big_sigma = d.sigma * d.sigma.transpose();
    return d;
}

double LoadModel::guard(Mode q, const StateVector& x, double control, ParamSpan alpha) const {
    require_mode(q);
    return def_.guard(q, x, control, alpha);
}

Mode LoadModel::transition(Mode q, const StateVector& x, double control, ParamSpan alpha) const {
    const auto next = postjump_of(q);
    if (!next) {
        return q;
    }
    return def_.guard(q, x, control, alpha) <= 0.0 ? *next : q;
}

double LoadModel::raw_hazard(Mode q, const StateVector& x) const {
    require_mode(q);
    const double rate = def_.hazard ? def_.hazard(q, x) : 0.0;
    if (!(rate >= 0.0)) {
        throw ModelError("hazard must be nonnegative (mode " + std::to_string(q) + ")");
    }
    return rate;
}

double LoadModel::hazard(Mode q, const StateVector& x, double control, ParamSpan alpha) const {
    const double rate = raw_hazard(q, x);
    if (rate == 0.0) {
        return 0.0;
    }
    const auto next = postjump_of(q);
    if (!next || !in_domain(*next, x, control, alpha)) {
        return 0.0;
    }
    return rate;
}

double LoadModel::output(Mode q, ParamSpan theta) const {
    require_mode(q);
    return def_.output(q, theta);
}

std::optional<Mode> LoadModel::postjump_of(Mode q) const { return def_.successor[index_of(q)]; }

std::optional<Mode> LoadModel::prejump_of(Mode q) const { return def_.predecessor[index_of(q)]; }

bool LoadModel::in_domain(Mode q, const StateVector& x, double control, ParamSpan alpha) const {
    if (is_terminal(q)) {
        return true;
    }
    return def_.guard(q, x, control, alpha) > 0.0;
}

double LoadModel::setpoint_shift(double control) const {
    if (!def_.setpoint_shift) {
        throw ModelError("setpoint_shift is only defined for thermostat families");
    }
    return def_.setpoint_shift(control);
}

// ---------------------------------------------------------------------------

HousePrior default_house_prior() {
    HousePrior prior;
    prior.nominal.cooling_capacity = prior.sized_capacity(prior.nominal);
    return prior;
}

EtpParameters etp_from_house(const HouseParameters& h, double noise_sigma,
                             std::array<double, 2> hazard) {
    EtpParameters p;
    const double ca = h.air_heat_capacity;
    const double cm = h.mass_heat_capacity;
    p.a << -(h.envelope_conductance + h.mass_conductance) / ca, h.mass_conductance / ca,
        h.mass_conductance / cm, -h.mass_conductance / cm;
    p.b_off << (h.envelope_conductance * h.outdoor_temperature + h.internal_gain) / ca,
        h.mass_gain / cm;
    p.b_on = p.b_off;
    p.b_on(0) -= h.cooling_capacity / ca;
    p.setpoint = h.setpoint;
    p.deadband = h.deadband;
    p.power_kw = h.cooling_capacity / (h.cop * kBtuPerKwh);
    p.noise_sigma = noise_sigma;
    p.hazard = hazard;
    return p;
}

EtpParameters default_etp_parameters() { return etp_from_house(default_house_prior().nominal); }

LoadParameters pack(const EtpParameters& p) {
    using namespace hvac_layout;
    LoadParameters out;
    out.theta.assign(kThetaSize, 0.0);
    out.theta[kA00] = p.a(0, 0);
    out.theta[kA01] = p.a(0, 1);
    out.theta[kA10] = p.a(1, 0);
    out.theta[kA11] = p.a(1, 1);
    out.theta[kBOff0] = p.b_off(0);
    out.theta[kBOff1] = p.b_off(1);
    out.theta[kBOn0] = p.b_on(0);
    out.theta[kBOn1] = p.b_on(1);
    out.theta[kPower] = p.power_kw;
    out.theta[kSigma] = p.noise_sigma;
    out.alpha = {p.setpoint, p.deadband};
    return out;
}

EtpParameters unpack_etp(const LoadParameters& lp) {
    using namespace hvac_layout;
    if (lp.theta.size() != kThetaSize || lp.alpha.size() != kAlphaSize) {
        throw ModelError("HVAC parameter vectors have the wrong layout");
    }
    EtpParameters p;
    p.a << lp.theta[kA00], lp.theta[kA01], lp.theta[kA10], lp.theta[kA11];
    p.b_off << lp.theta[kBOff0], lp.theta[kBOff1];
    p.b_on << lp.theta[kBOn0], lp.theta[kBOn1];
    p.power_kw = lp.theta[kPower];
    p.noise_sigma = lp.theta[kSigma];
    p.setpoint = lp.alpha[kSetpoint];
    p.deadband = lp.alpha[kDeadband];
    return p;
}

void validate_etp(const EtpParameters& p) {
    if (!(p.deadband > 0.0)) {
        throw ModelError("deadband half-width must be positive");
    }
    const Eigen::EigenSolver<Eigen::Matrix2d> solver(p.a, false);
    for (int i = 0; i < 2; ++i) {
        if (!(solver.eigenvalues()(i).real() < 0.0)) {
            throw ModelError("ETP matrix A is not dissipative (eigenvalue with real part >= 0)");
        }
    }
    if (p.noise_sigma < 0.0 || p.hazard[0] < 0.0 || p.hazard[1] < 0.0) {
        throw ModelError("noise intensity and hazards must be nonnegative");
    }
}

namespace {

double hvac_guard(Mode q, const StateVector& x, double setpoint_shift,
                  std::span<const double> alpha) {
    using namespace hvac_layout;
    const double u = alpha[kSetpoint] + setpoint_shift;
    const double d = alpha[kDeadband];
    return q == kOn ? x(0) - (u - d) : (u + d) - x(0);
}

}  // namespace

LoadModel make_hvac_etp(const EtpParameters& params) {
    validate_etp(params);
    using namespace hvac_layout;
    LoadModel::Definition def;
    def.family = ModelFamily::HvacEtp;
    def.modes = {kOff, kOn};
    def.dim = 2;
    def.noise_dim = 1;
    def.theta_size = kThetaSize;
    def.alpha_size = kAlphaSize;
    def.drift = [](Mode q, const StateVector& x, std::span<const double> th) {
        const std::size_t b = q == kOn ? kBOn0 : kBOff0;
        StateVector f(2);
        f(0) = th[kA00] * x(0) + th[kA01] * x(1) + th[b];
        f(1) = th[kA10] * x(0) + th[kA11] * x(1) + th[b + 1];
        return f;
    };
    def.sigma = [](Mode, const StateVector&, std::span<const double> th) {
        NoiseMatrix s(2, 1);
        s << th[kSigma], 0.0;
        return s;
    };
    def.guard = [](Mode q, const StateVector& x, double control, std::span<const double> alpha) {
        return hvac_guard(q, x, control, alpha);
    };
    const auto rates = params.hazard;
    def.hazard = [rates](Mode q, const StateVector&) { return rates[q == kOn ? 1 : 0]; };
    def.output = [](Mode q, std::span<const double> th) { return q == kOn ? th[kPower] : 0.0; };
    def.successor = {kOn, kOff};
    def.predecessor = {kOn, kOff};
    def.setpoint_shift = [](double v) { return v; };
    def.nominal = pack(params);
    return LoadModel(std::move(def));
}

double saturated_setpoint_shift(double v, double slope, double bound) {
    if (std::abs(v) <= bound) {
        return slope * v;
    }
    return slope * bound * (v > 0.0 ? 1.0 : -1.0);
}

LoadModel make_price_responsive(const LoadModel& base, double slope, double bound) {
    if (base.family() != ModelFamily::HvacEtp) {
        throw ModelError("price response wraps an HVAC ETP model");
    }
    if (!(bound > 0.0)) {
        throw ModelError("linear-region bound b must be positive");
    }
    LoadModel::Definition def = base.definition();
    def.family = ModelFamily::PriceResponsiveHvac;
    auto shift = [slope, bound](double v) { return saturated_setpoint_shift(v, slope, bound); };
    def.setpoint_shift = shift;
    def.guard = [shift](Mode q, const StateVector& x, double price, std::span<const double> alpha) {
        return hvac_guard(q, x, shift(price), alpha);
    };
    return LoadModel(std::move(def));
}

LoadModel make_pev(double charge_rate_kw, double deadline_slack_hours,
                   std::array<double, 2> hazard) {
    if (!(charge_rate_kw > 0.0)) {
        throw ModelError("charge rate must be positive");
    }
    if (hazard[0] < 0.0 || hazard[1] < 0.0) {
        throw ModelError("hazards must be nonnegative");
    }
    using namespace pev_layout;
    LoadModel::Definition def;
    def.family = ModelFamily::Pev;
    def.modes = {kWaiting, kCharging, kCompleted};
    def.dim = 2;
    def.noise_dim = 1;
    def.theta_size = kThetaSize;
    def.alpha_size = kAlphaSize;
    def.drift = [](Mode q, const StateVector&, std::span<const double>) {
        StateVector f(2);
        if (q == kWaiting) {
            f << 0.0, -1.0;
        } else {
            f << -1.0, 0.0;
        }
        return f;
    };
    def.sigma = [](Mode, const StateVector&, std::span<const double>) {
        return NoiseMatrix::Zero(2, 1).eval();
    };
    // X0 = {x1 >= 0, x2 > 0} exits through x2 = 0; X1 = {x1 > 0}; X2 = {x1 <= 0}.
    def.guard = [](Mode q, const StateVector& x, double, std::span<const double>) {
        switch (q) {
            case kWaiting:
                return x(1);
            case kCharging:
                return x(0);
            default:
                return -x(0);
        }
    };
    def.hazard = [hazard](Mode q, const StateVector&) {
        return q == kCompleted ? 0.0 : hazard[static_cast<std::size_t>(q)];
    };
    def.output = [](Mode q, std::span<const double> th) {
        return q == kCharging ? th[kChargeRate] : 0.0;
    };
    def.successor = {kCharging, kCompleted, std::nullopt};
    def.predecessor = {std::nullopt, kWaiting, kCharging};
    def.nominal.theta = {charge_rate_kw};
    def.nominal.alpha = {deadline_slack_hours};
    return LoadModel(std::move(def));
}

StateVector evaluate_drift(const LoadModel& model, const HybridState& state,
                           std::span<const double> theta) {
    return model.drift(state.mode, state.x, theta);
}

NoiseMatrix evaluate_big_sigma(const LoadModel& model, const HybridState& state,
                               std::span<const double> theta) {
    return model.diffusion(state.mode, state.x, theta).big_sigma;
}

double evaluate_output(const LoadModel& model, Mode mode, std::span<const double> theta) {
    return model.output(mode, theta);
}

StateVector make_state(std::initializer_list<double> values) {
    StateVector x(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) {
        x(i++) = v;
    }
    return x;
}

}  // namespace aggload
