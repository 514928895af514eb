#include "aggload/errors.hpp"
#include "aggload/model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace aggload;
namespace hl = hvac_layout;
namespace pl = pev_layout;

namespace {

LoadModel default_hvac() { return make_hvac_etp(default_etp_parameters()); }

}  // namespace

TEST(HvacEtp, OffAtUpperEdgeSwitchesOn) {
    const EtpParameters p = default_etp_parameters();
    const LoadModel m = make_hvac_etp(p);
    const LoadParameters lp = pack(p);
    const StateVector x = make_state({p.setpoint + p.deadband, p.setpoint});
    EXPECT_EQ(m.transition(hl::kOff, x, 0.0, lp.alpha), hl::kOn);
    const StateVector y = make_state({p.setpoint - p.deadband, p.setpoint});
    EXPECT_EQ(m.transition(hl::kOn, y, 0.0, lp.alpha), hl::kOff);
}

TEST(HvacEtp, GuardFormulas) {
    const EtpParameters p = default_etp_parameters();
    const LoadModel m = make_hvac_etp(p);
    const LoadParameters lp = pack(p);
    const StateVector x = make_state({73.4, 70.0});
    EXPECT_DOUBLE_EQ(m.guard(hl::kOn, x, 0.0, lp.alpha), 73.4 - (p.setpoint - p.deadband));
    EXPECT_DOUBLE_EQ(m.guard(hl::kOff, x, 0.0, lp.alpha), (p.setpoint + p.deadband) - 73.4);
}

TEST(HvacEtp, OutputIsRatedPowerWhenOn) {
    const EtpParameters p = default_etp_parameters();
    const LoadModel m = make_hvac_etp(p);
    const LoadParameters lp = pack(p);
    EXPECT_DOUBLE_EQ(evaluate_output(m, hl::kOn, lp.theta), p.power_kw);
    EXPECT_DOUBLE_EQ(evaluate_output(m, hl::kOff, lp.theta), 0.0);
}

TEST(HvacEtp, RejectsBadParameters) {
    EtpParameters p = default_etp_parameters();
    p.deadband = 0.0;
    EXPECT_THROW(make_hvac_etp(p), ModelError);
    p = default_etp_parameters();
    p.a(0, 0) = 1.0;  // unstable air node
    EXPECT_THROW(make_hvac_etp(p), ModelError);
}

TEST(HvacEtp, DriftMatchesMatrixArithmetic) {
    const EtpParameters p = default_etp_parameters();
    const LoadModel m = default_hvac();
    const LoadParameters lp = pack(p);
    const HybridState s{hl::kOn, make_state({72.0, 72.0})};
    const StateVector f = evaluate_drift(m, s, lp.theta);
    const Eigen::Vector2d expect = p.a * Eigen::Vector2d(72.0, 72.0) + p.b_on;
    EXPECT_NEAR(f(0), expect(0), 1e-12);
    EXPECT_NEAR(f(1), expect(1), 1e-12);
}

TEST(HvacEtp, DefaultMatricesFromHouseParameters) {
    // Nominal house: Ca 3000, Cm 6000, Ua 1500, Hm 12000, Qa 3000, Tout 84,
    // capacity sized 1.5 * (1500 * 14 + 3000) = 36000 Btu/h.
    const EtpParameters p = default_etp_parameters();
    EXPECT_NEAR(p.a(0, 0), -(1500.0 + 12000.0) / 3000.0, 1e-12);
    EXPECT_NEAR(p.a(0, 1), 12000.0 / 3000.0, 1e-12);
    EXPECT_NEAR(p.a(1, 0), 12000.0 / 6000.0, 1e-12);
    EXPECT_NEAR(p.a(1, 1), -12000.0 / 6000.0, 1e-12);
    EXPECT_NEAR(p.b_off(0), (1500.0 * 84.0 + 3000.0) / 3000.0, 1e-12);
    EXPECT_NEAR(p.b_on(0), (1500.0 * 84.0 + 3000.0 - 36000.0) / 3000.0, 1e-12);
    EXPECT_NEAR(p.power_kw, 36000.0 / (3.5 * kBtuPerKwh), 1e-12);
}

TEST(HvacEtp, ZeroNoiseGivesZeroSigma) {
    const LoadModel m = default_hvac();
    const LoadParameters lp = pack(default_etp_parameters());
    const NoiseMatrix s = evaluate_big_sigma(m, {hl::kOn, make_state({74.0, 74.0})}, lp.theta);
    EXPECT_EQ(s.norm(), 0.0);
}

TEST(HvacEtp, BigSigmaIsSigmaSigmaT) {
    EtpParameters p = default_etp_parameters();
    p.noise_sigma = 0.7;
    const LoadModel m = make_hvac_etp(p);
    const LoadParameters lp = pack(p);
    const DiffusionMatrix d = m.diffusion(hl::kOff, make_state({74.0, 73.0}), lp.theta);
    const NoiseMatrix expect = d.sigma * d.sigma.transpose();
    EXPECT_LT((d.big_sigma - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(d.big_sigma(0, 0), 0.49, 1e-12);
    EXPECT_EQ(d.big_sigma(1, 1), 0.0);
    EXPECT_LT((d.big_sigma - d.big_sigma.transpose()).norm(), 1e-15);
}

TEST(HvacEtp, UnknownModeIsRejected) {
    const LoadModel m = default_hvac();
    const LoadParameters lp = pack(default_etp_parameters());
    EXPECT_THROW((void)evaluate_drift(m, {5, make_state({74.0, 74.0})}, lp.theta), ModelError);
    EXPECT_THROW((void)evaluate_output(m, -1, lp.theta), ModelError);
}

TEST(HvacEtp, LimitCycleOracleIsClosed) {
    const EtpParameters p = default_etp_parameters();
    const oracle::LimitCycle c = oracle::etp_limit_cycle(p);
    EXPECT_GT(c.period, 0.0);
    EXPECT_GT(c.duty, 0.0);
    EXPECT_LT(c.duty, 1.0);
    // Flowing the turn-on state through one ON and one OFF sojourn returns it.
    const oracle::Switch on = oracle::etp_first_switch(p, hl::kOn, c.at_turn_on);
    const oracle::Switch off = oracle::etp_first_switch(p, hl::kOff, on.x);
    EXPECT_NEAR(on.time + off.time, c.period, 1e-8);
    EXPECT_NEAR((off.x - c.at_turn_on).norm(), 0.0, 1e-8);
}

TEST(HvacEtp, OutflowIsTransversalOnTheCycle) {
    // f . nu > 0 where the flow actually reaches G: OFF leaves through
    // x1 = u + d (nu = +e1), ON through x1 = u - d (nu = -e1). A mass much
    // colder or warmer than the air breaks this, but the cycle never gets there.
    const EtpParameters p = default_etp_parameters();
    const LoadModel m = make_hvac_etp(p);
    const LoadParameters lp = pack(p);
    const oracle::LimitCycle c = oracle::etp_limit_cycle(p);
    const oracle::Switch off = oracle::etp_first_switch(p, hl::kOn, c.at_turn_on);
    const StateVector up = make_state({c.at_turn_on(0), c.at_turn_on(1)});
    const StateVector lo = make_state({off.x(0), off.x(1)});
    EXPECT_GT(m.drift(hl::kOff, up, lp.theta)(0), 0.0);
    EXPECT_GT(-m.drift(hl::kOn, lo, lp.theta)(0), 0.0);
}

TEST(HvacEtp, TransitionIsIdentityInInterior) {
    const EtpParameters p = default_etp_parameters();
    const LoadModel m = make_hvac_etp(p);
    const LoadParameters lp = pack(p);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(p.setpoint - p.deadband + 1e-6,
                                             p.setpoint + p.deadband - 1e-6);
    for (int i = 0; i < 1000; ++i) {
        const StateVector x = make_state({u(rng), u(rng)});
        for (Mode q : {hl::kOff, hl::kOn}) {
            ASSERT_GT(m.guard(q, x, 0.0, lp.alpha), 0.0);
            EXPECT_EQ(m.transition(q, x, 0.0, lp.alpha), q);
        }
    }
}

TEST(HvacEtp, GuardChangesSignOnlyThroughZeroAlongFlow) {
    // Densely sampled drift-only trajectory: consecutive guard values never
    // jump from clearly positive to clearly negative.
    const EtpParameters p = default_etp_parameters();
    const LoadModel m = make_hvac_etp(p);
    const LoadParameters lp = pack(p);
    Eigen::Vector2d x(p.setpoint, p.setpoint);
    const double dt = 1e-4;
    double g_prev = m.guard(hl::kOff, make_state({x(0), x(1)}), 0.0, lp.alpha);
    for (int i = 0; i < 5000; ++i) {
        x = x + dt * (p.a * x + p.b_off);
        const double g = m.guard(hl::kOff, make_state({x(0), x(1)}), 0.0, lp.alpha);
        EXPECT_LT(std::abs(g - g_prev), 10.0 * dt);
        g_prev = g;
    }
}

TEST(Pev, TransitionsFollowGuards) {
    const LoadModel m = make_pev(6.6);
    const std::vector<double> alpha{0.0};
    const StateVector a = make_state({2.0, 0.0});
    EXPECT_EQ(m.transition(pl::kWaiting, a, 0.0, alpha), pl::kCharging);
    const StateVector b = make_state({0.0, -1.0});
    EXPECT_EQ(m.transition(pl::kCharging, b, 0.0, alpha), pl::kCompleted);
    // Interior points keep their mode; completed is terminal.
    EXPECT_EQ(m.transition(pl::kWaiting, make_state({2.0, 0.5}), 0.0, alpha), pl::kWaiting);
    EXPECT_TRUE(m.is_terminal(pl::kCompleted));
    EXPECT_EQ(m.transition(pl::kCompleted, make_state({-3.0, 0.0}), 0.0, alpha),
              pl::kCompleted);
}

TEST(Pev, UnitDrifts) {
    const LoadModel m = make_pev(6.6);
    const std::vector<double> theta{6.6};
    const StateVector f0 = evaluate_drift(m, {pl::kWaiting, make_state({1.0, 1.0})}, theta);
    EXPECT_EQ(f0(0), 0.0);
    EXPECT_EQ(f0(1), -1.0);
    for (Mode q : {pl::kCharging, pl::kCompleted}) {
        const StateVector f = evaluate_drift(m, {q, make_state({1.0, 1.0})}, theta);
        EXPECT_EQ(f(0), -1.0);
        EXPECT_EQ(f(1), 0.0);
    }
    // Half an hour of charging from (3, 1).
    const StateVector x = make_state({3.0, 1.0});
    const StateVector y = x + 0.5 * evaluate_drift(m, {pl::kCharging, x}, theta);
    EXPECT_DOUBLE_EQ(y(0), 2.5);
    EXPECT_DOUBLE_EQ(y(1), 1.0);
}

TEST(Pev, OutputAndChain) {
    const LoadModel m = make_pev(6.6);
    const std::vector<double> theta{6.6};
    EXPECT_EQ(evaluate_output(m, pl::kWaiting, theta), 0.0);
    EXPECT_EQ(evaluate_output(m, pl::kCharging, theta), 6.6);
    EXPECT_EQ(evaluate_output(m, pl::kCompleted, theta), 0.0);
    EXPECT_EQ(m.postjump_of(pl::kWaiting), pl::kCharging);
    EXPECT_EQ(m.postjump_of(pl::kCharging), pl::kCompleted);
    EXPECT_FALSE(m.postjump_of(pl::kCompleted).has_value());
    EXPECT_EQ(m.prejump_of(pl::kCharging), pl::kWaiting);
    EXPECT_FALSE(m.prejump_of(pl::kWaiting).has_value());
    EXPECT_THROW(make_pev(0.0), ModelError);
}

TEST(PriceResponsive, SaturatedShift) {
    EXPECT_DOUBLE_EQ(saturated_setpoint_shift(0.0, 1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(saturated_setpoint_shift(0.4, 0.5, 1.0), 0.2);
    EXPECT_DOUBLE_EQ(saturated_setpoint_shift(2.0, 0.5, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(saturated_setpoint_shift(-3.0, 0.5, 1.0), -0.5);
    const double b = 1.5;
    for (double v : {1.6, 2.0, 10.0, -1.6, -7.0}) {
        EXPECT_DOUBLE_EQ(saturated_setpoint_shift(v, 2.0, b),
                         saturated_setpoint_shift(b * (v > 0 ? 1.0 : -1.0), 2.0, b));
    }
}

TEST(PriceResponsive, ZeroDeviationMatchesBase) {
    const EtpParameters p = default_etp_parameters();
    const LoadModel base = make_hvac_etp(p);
    const LoadModel pr = make_price_responsive(base, 1.0, 1.0);
    const LoadParameters lp = pack(p);
    for (double x1 = 72.0; x1 <= 76.0; x1 += 0.25) {
        const StateVector x = make_state({x1, 74.0});
        for (Mode q : {hl::kOff, hl::kOn}) {
            EXPECT_EQ(pr.guard(q, x, 0.0, lp.alpha), base.guard(q, x, 0.0, lp.alpha));
        }
    }
    EXPECT_EQ(pr.family(), ModelFamily::PriceResponsiveHvac);
    EXPECT_THROW(make_price_responsive(base, 1.0, 0.0), ModelError);
    EXPECT_THROW(make_price_responsive(make_pev(6.6), 1.0, 1.0), ModelError);
}

TEST(PriceResponsive, UnitDeviationShiftsSetpointByOne) {
    const EtpParameters p = default_etp_parameters();
    const LoadModel pr = make_price_responsive(make_hvac_etp(p), 1.0, 1.0);
    const LoadParameters lp = pack(p);
    EXPECT_DOUBLE_EQ(pr.setpoint_shift(1.0), 1.0);
    EXPECT_DOUBLE_EQ(pr.setpoint_shift(0.0), 0.0);
    const StateVector x = make_state({p.setpoint + p.deadband + 1.0, 74.0});
    EXPECT_NEAR(pr.guard(hl::kOff, x, 1.0, lp.alpha), 0.0, 1e-12);
}

TEST(Layout, PackRoundTrip) {
    EtpParameters p = default_etp_parameters();
    p.noise_sigma = 0.3;
    p.setpoint = 71.5;
    const EtpParameters q = unpack_etp(pack(p));
    EXPECT_EQ(q.a, p.a);
    EXPECT_EQ(q.b_on, p.b_on);
    EXPECT_EQ(q.b_off, p.b_off);
    EXPECT_EQ(q.setpoint, p.setpoint);
    EXPECT_EQ(q.deadband, p.deadband);
    EXPECT_EQ(q.power_kw, p.power_kw);
    EXPECT_EQ(q.noise_sigma, p.noise_sigma);
}
