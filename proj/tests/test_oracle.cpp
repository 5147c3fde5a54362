#include "mmdp/environments.hpp"
#include "mmdp/oracle.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

using namespace mmdp;

namespace {

Environment toy() { return build_environment({EnvironmentKind::ToyBinary, 2.0}); }

OracleValues toy_oracle() {
    const Environment env = toy();
    return exact_tabular_oracle(env.spec, env.target, env.control, env.behavior);
}

}  // namespace

TEST(ExactOracle, ToyEffectsMatchPublishedValues) {
    const auto t0 = std::chrono::steady_clock::now();
    const OracleValues o = toy_oracle();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 1.0);
    EXPECT_NEAR(o.effects.ide, -1.277, 0.02);
    EXPECT_NEAR(o.effects.ime, -1.222, 0.02);
    EXPECT_NEAR(o.effects.dde, -2.982, 0.02);
    EXPECT_NEAR(o.effects.dme, -0.085, 0.02);
}

TEST(ExactOracle, ToyEtasMatchIndependentSolve) {
    // Values from an independent dense solve of the same chains.
    const OracleValues o = toy_oracle();
    EXPECT_NEAR(eta_of(o.eta, Regime::PiE), 2.3970, 1e-3);
    EXPECT_NEAR(eta_of(o.eta, Regime::GE), 3.6737, 1e-3);
    EXPECT_NEAR(eta_of(o.eta, Regime::PiE0), 4.8962, 1e-3);
    EXPECT_NEAR(eta_of(o.eta, Regime::G0), 7.8784, 1e-3);
    EXPECT_NEAR(eta_of(o.eta, Regime::Pi0), 7.9631, 1e-3);
    EXPECT_NEAR(o.behavior_dist(1), 0.6160, 1e-3);
    EXPECT_NEAR(o.state_dist[regime_index(Regime::PiE)](1), 0.3206, 1e-3);
    EXPECT_NEAR(o.state_dist[regime_index(Regime::G0)](1), 0.9195, 1e-3);
    EXPECT_NEAR(o.state_dist[regime_index(Regime::Pi0)](1), 0.9365, 1e-3);
}

TEST(ExactOracle, TelescopingIsExact) {
    const OracleValues o = toy_oracle();
    const double diff = eta_of(o.eta, Regime::PiE) - eta_of(o.eta, Regime::Pi0);
    EXPECT_NEAR(o.effects.ate, diff, 1e-12);
    EXPECT_EQ(o.effects.ate, o.effects.ide + o.effects.ime + o.effects.dde + o.effects.dme);
    EXPECT_NEAR(o.alternative.ate, diff, 1e-12);
}

TEST(ExactOracle, StationaryLawsAreFixedPoints) {
    const Environment env = toy();
    const OracleValues o = toy_oracle();
    const TabularKernels k = tabulate(env.spec);
    for (int r = 0; r < kRegimeCount; ++r) {
        const Matrix P = tabular::state_chain(k, o.policies, regime_law(static_cast<Regime>(r)));
        const Vector& mu = o.state_dist[static_cast<std::size_t>(r)];
        EXPECT_NEAR(mu.sum(), 1.0, 1e-10);
        EXPECT_LT((P.transpose() * mu - mu).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(ExactOracle, RatiosAverageToOneUnderBehavior) {
    const OracleValues o = toy_oracle();
    for (Regime r : {Regime::PiE, Regime::Pi0, Regime::G0, Regime::GTildeE})
        EXPECT_NEAR(o.behavior_dist.dot(o.ratio(r)), 1.0, 1e-10);
}

TEST(ExactOracle, BellmanResidualsVanish) {
    const Environment env = toy();
    const OracleValues o = toy_oracle();
    for (int r = 0; r < kRegimeCount; ++r) EXPECT_LT(oracle_q_check(o, env.spec, static_cast<Regime>(r)), 1e-8);
}

TEST(ExactOracle, PerturbedQBreaksFixedPoint) {
    const Environment env = toy();
    OracleValues o = toy_oracle();
    o.q[regime_index(Regime::PiE)](3) += 1.0;
    // The perturbed cell alone moves by 1 minus its self-transition weight.
    EXPECT_GT(oracle_q_check(o, env.spec, Regime::PiE), 0.1);
}

TEST(ExactOracle, IdenticalPoliciesGiveZeroEffects) {
    const Environment env = toy();
    const OracleValues o = exact_tabular_oracle(env.spec, env.control, env.control, env.behavior);
    for (double v : o.effects.as_array()) EXPECT_NEAR(v, 0.0, 1e-12);
    for (double v : o.alternative.as_array()) EXPECT_NEAR(v, 0.0, 1e-12);
    const Policy one = Policy::deterministic("one", 2, 1);
    const OracleValues o1 = exact_tabular_oracle(env.spec, one, one, env.behavior);
    for (double v : o1.effects.as_array()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(ExactOracle, IdenticalStochasticPoliciesOnlyCancelInTotal) {
    // A G-process draws the mediator independently of the current action, so
    // with a stochastic pi_e = pi_0 the components need not vanish; their sum does.
    const Environment env = toy();
    const OracleValues o = exact_tabular_oracle(env.spec, env.target, env.target, env.behavior);
    EXPECT_NEAR(o.effects.ate, 0.0, 1e-12);
    EXPECT_NEAR(o.effects.ide + o.effects.ime, 0.0, 1e-12);
    EXPECT_GT(std::abs(o.effects.ide), 1e-3);
}

TEST(ExactOracle, ConstantRewardGivesZeroQ) {
    BinaryLogisticParams p;
    p.rew_c0 = 800.0;  // expit saturates to exactly 1
    p.rew_cs = p.rew_ca = p.rew_cm = 0.0;
    const Environment env = make_binary_logistic_environment(p);
    const OracleValues o = exact_tabular_oracle(env.spec, env.target, env.control, env.behavior);
    for (int r = 0; r < kRegimeCount; ++r) {
        EXPECT_NEAR(o.eta[static_cast<std::size_t>(r)], 10.0, 1e-12);
        EXPECT_LT(o.q[static_cast<std::size_t>(r)].cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(oracle_q_check(o, env.spec, static_cast<Regime>(r)) < 1e-12, true);
    }
    for (double v : o.effects.as_array()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(ExactOracle, RejectsContinuousSpec) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    EXPECT_THROW(exact_tabular_oracle(env.spec, env.target, env.control, env.behavior), std::invalid_argument);
}

TEST(ExactOracle, NonErgodicChainReported) {
    BinaryLogisticParams p;
    p.next_state_constant = std::nullopt;
    p.nxt_c0 = -800.0;  // S' = 0 from state 0 ...
    p.nxt_cs = 1600.0;  // ... and S' = 1 from state 1: two absorbing states
    p.nxt_ca = p.nxt_cm = 0.0;
    const Environment env = make_binary_logistic_environment(p);
    EXPECT_THROW(exact_tabular_oracle(env.spec, env.target, env.control, env.behavior), std::runtime_error);
}

TEST(HorizonAverage, ConvergesToStationaryLaw) {
    const Environment env = toy();
    const OracleValues o = toy_oracle();
    const TabularKernels k = tabulate(env.spec);
    const Vector p1 = horizon_average_state_law(k, o.policies, 1);
    EXPECT_NEAR(p1(1), 0.5, 1e-15);
    const Vector pl = horizon_average_state_law(k, o.policies, 200000);
    EXPECT_NEAR(pl(1), o.behavior_dist(1), 1e-4);
}

TEST(McOracle, ToyAgreesWithExactSolve) {
    const Environment env = toy();
    const OracleValues ex = toy_oracle();
    const OracleValues mc = mc_oracle(env.spec, env.target, env.control, 5000, 1000, 31);
    const auto e = ex.effects.as_array();
    const auto m = mc.effects.as_array();
    const auto se = mc.effects_se.as_array();
    for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GT(se[j], 0.0);
        EXPECT_NEAR(m[j], e[j], 3.0 * se[j]) << kEffectNames[j];
    }
    for (int r = 0; r < kRegimeCount; ++r)
        EXPECT_NEAR(mc.eta[static_cast<std::size_t>(r)], ex.eta[static_cast<std::size_t>(r)],
                    3.0 * mc.eta_se[static_cast<std::size_t>(r)]);
}

TEST(McOracle, IdenticalPoliciesGiveZeroEffects) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    const OracleValues mc = mc_oracle(env.spec, env.control, env.control, 200, 200, 5);
    const auto m = mc.effects.as_array();
    const auto se = mc.effects_se.as_array();
    for (std::size_t j = 0; j < 5; ++j) EXPECT_LE(std::abs(m[j]), 3.0 * se[j] + 1e-12) << kEffectNames[j];
}

TEST(McOracle, Deterministic) {
    const Environment env = toy();
    const OracleValues a = mc_oracle(env.spec, env.target, env.control, 50, 100, 9);
    const OracleValues b = mc_oracle(env.spec, env.target, env.control, 50, 100, 9);
    EXPECT_EQ(a.eta, b.eta);
    EXPECT_THROW(mc_oracle(env.spec, env.target, env.control, 0, 100, 9), std::invalid_argument);
}
