#include "mmdp/environments.hpp"
#include "mmdp/oracle_nuisance.hpp"
#include "mmdp/scenarios.hpp"
#include "mmdp/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mmdp;

namespace {

Environment toy() { return build_environment({EnvironmentKind::ToyBinary, 2.0}); }

double omega_at(const NuisanceSet& ns, Regime r, int state) {
    return ns.ratio(r).value(scalar_point(state));
}

double pm1(const NuisanceSet& ns, int s, int a) { return ns.mediator.density(scalar_point(1), scalar_point(s), a); }

bool same_q(const NuisanceSet& a, const NuisanceSet& b) {
    for (Regime r : kPrimaryRegimes)
        if (a.q_for(r).eta != b.q_for(r).eta || a.q_for(r).q.coef != b.q_for(r).q.coef) return false;
    return true;
}

}  // namespace

TEST(Corruption, AllCorrectIsIdentity) {
    const Environment env = toy();
    const NuisanceSet ns = oracle_nuisances(env, 50);
    const NuisanceSet c = corrupt_nuisances(ns, CorruptionScenario::AllCorrect, shape_of(env.spec));
    EXPECT_TRUE(same_q(ns, c));
    EXPECT_EQ(ns.reward.coef, c.reward.coef);
    for (int s = 0; s < 2; ++s) {
        EXPECT_EQ(omega_at(ns, Regime::PiE, s), omega_at(c, Regime::PiE, s));
        for (int a = 0; a < 2; ++a) EXPECT_EQ(pm1(ns, s, a), pm1(c, s, a));
    }
    EXPECT_EQ(c.provenance, Provenance::Oracle);
}

TEST(Corruption, ProtectedSetsKeptExactly) {
    const Environment env = toy();
    const NuisanceSet ns = oracle_nuisances(env, 50);
    const DataShape shape = shape_of(env.spec);
    for (CorruptionScenario sc : kAllScenarios) {
        if (sc == CorruptionScenario::AllCorrect) continue;
        const ProtectedSet keep = protected_set(sc);
        const NuisanceSet c = corrupt_nuisances(ns, sc, shape);
        EXPECT_EQ(c.provenance, Provenance::Corrupted);
        EXPECT_EQ(same_q(ns, c), keep.q) << to_string(sc);
        EXPECT_EQ(ns.reward.coef == c.reward.coef, keep.reward) << to_string(sc);
        bool pm_same = true, pb_same = true;
        for (int s = 0; s < 2; ++s) {
            pb_same = pb_same && ns.behavior.prob(scalar_point(s), 1) == c.behavior.prob(scalar_point(s), 1);
            for (int a = 0; a < 2; ++a) pm_same = pm_same && pm1(ns, s, a) == pm1(c, s, a);
        }
        EXPECT_EQ(pm_same, keep.mediator) << to_string(sc);
        EXPECT_EQ(pb_same, keep.behavior) << to_string(sc);
        EXPECT_EQ(omega_at(ns, Regime::PiE, 1) == omega_at(c, Regime::PiE, 1), keep.omega_target) << to_string(sc);
        EXPECT_EQ(omega_at(ns, Regime::Pi0, 1) == omega_at(c, Regime::Pi0, 1), keep.omega_other) << to_string(sc);
    }
}

TEST(Corruption, ProtectedSetMembership) {
    const ProtectedSet m1 = protected_set(CorruptionScenario::OnlyM1);
    EXPECT_TRUE(m1.omega_target && m1.behavior && m1.reward);
    EXPECT_FALSE(m1.omega_other || m1.mediator || m1.q);
    const ProtectedSet m2 = protected_set(CorruptionScenario::OnlyM2);
    EXPECT_TRUE(m2.omega_target && m2.omega_other && m2.behavior && m2.mediator);
    EXPECT_FALSE(m2.reward || m2.q);
    const ProtectedSet m3 = protected_set(CorruptionScenario::OnlyM3);
    EXPECT_TRUE(m3.q && m3.reward && m3.mediator);
    EXPECT_FALSE(m3.omega_target || m3.omega_other || m3.behavior);
    const ProtectedSet none = protected_set(CorruptionScenario::AllWrong);
    EXPECT_FALSE(none.omega_target || none.omega_other || none.behavior || none.mediator || none.reward || none.q);
}

TEST(Corruption, RatioShifts) {
    const Environment env = toy();
    const NuisanceSet ns = oracle_nuisances(env, 50);
    const NuisanceSet c = corrupt_nuisances(ns, CorruptionScenario::AllWrong, shape_of(env.spec));
    EXPECT_NEAR(omega_at(c, Regime::PiE, 1) - omega_at(ns, Regime::PiE, 1), 0.25, 1e-12);
    EXPECT_NEAR(omega_at(c, Regime::PiE, 0) - omega_at(ns, Regime::PiE, 0), -0.25, 1e-12);
    EXPECT_EQ(omega_at(c, Regime::PiE0, 1), omega_at(c, Regime::PiE, 1));
    for (Regime r : {Regime::Pi0, Regime::G0}) {
        EXPECT_NEAR(omega_at(c, r, 1) - omega_at(ns, r, 1), -0.3, 1e-12) << to_string(r);
        EXPECT_NEAR(omega_at(c, r, 0) - omega_at(ns, r, 0), 0.3, 1e-12) << to_string(r);
    }
}

TEST(Corruption, ProbabilitiesStayInRange) {
    const Environment env = toy();
    const NuisanceSet c = corrupt_nuisances(oracle_nuisances(env, 50), CorruptionScenario::AllWrong, shape_of(env.spec));
    for (int s = 0; s < 2; ++s) {
        const double b = c.behavior.prob(scalar_point(s), 1);
        EXPECT_GE(b, 0.01);
        EXPECT_LE(b, 0.99);
        EXPECT_NEAR(c.behavior.probs(scalar_point(s)).sum(), 1.0, 1e-12);
        for (int a = 0; a < 2; ++a) {
            EXPECT_GE(pm1(c, s, a), 0.01);
            EXPECT_LE(pm1(c, s, a), 0.99);
            EXPECT_NEAR(pm1(c, s, a) + c.mediator.density(scalar_point(0), scalar_point(s), a), 1.0, 1e-12);
        }
    }
}

TEST(Corruption, DeterministicAndScenarioIndependent) {
    const Environment env = toy();
    const NuisanceSet ns = oracle_nuisances(env, 50);
    const DataShape shape = shape_of(env.spec);
    const NuisanceSet a = corrupt_nuisances(ns, CorruptionScenario::AllWrong, shape);
    const NuisanceSet b = corrupt_nuisances(ns, CorruptionScenario::AllWrong, shape);
    EXPECT_TRUE(same_q(a, b));
    EXPECT_EQ(a.reward.coef, b.reward.coef);
    // the reward perturbation in m2 is the same draw as in all-wrong
    const NuisanceSet m2 = corrupt_nuisances(ns, CorruptionScenario::OnlyM2, shape);
    EXPECT_EQ(a.reward.coef, m2.reward.coef);
    CorruptionConfig other;
    other.seed = 7;
    EXPECT_NE(corrupt_nuisances(ns, CorruptionScenario::AllWrong, shape, other).reward.coef, a.reward.coef);
}

TEST(Corruption, ContinuousRejected) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    const NuisanceSet ns = oracle_nuisances(toy(), 50);
    EXPECT_THROW(corrupt_nuisances(ns, CorruptionScenario::OnlyM1, shape_of(env.spec)), std::invalid_argument);
    EXPECT_THROW(scenario_from_string("m4"), std::invalid_argument);
    for (CorruptionScenario s : kAllScenarios) EXPECT_EQ(scenario_from_string(to_string(s)), s);
}

TEST(OptimalPolicy, DominantActionChosen) {
    // Action 1 raises the immediate reward and touches nothing else.
    BinaryLogisticParams p;
    p.med_ca = 0.0;
    p.nxt_ca = 0.0;
    p.rew_ca = 3.0;
    p.behavior = LogisticForm{0.0, {0.0}};
    const Environment env = make_binary_logistic_environment(p);
    const Policy one = Policy::deterministic("one", 2, 1), zero = Policy::deterministic("zero", 2, 0);
    const OracleValues o = exact_tabular_oracle(env.spec, one, zero, env.behavior);
    ASSERT_GT(eta_of(o.eta, Regime::PiE), eta_of(o.eta, Regime::Pi0));

    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.behavior, 100, 50, 21));
    const OptimalPolicyFit fit = estimate_optimal_policy(d, shape_of(env.spec));
    for (int s = 0; s < 2; ++s) EXPECT_EQ(fit.policy.prob(scalar_point(s), 1), 1.0);
}

TEST(OptimalPolicy, TiesGoToFirstAction) {
    BinaryLogisticParams p;
    p.rew_c0 = 800.0;
    p.rew_cs = p.rew_ca = p.rew_cm = 0.0;
    const Environment env = make_binary_logistic_environment(p);
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.behavior, 50, 40, 22));
    const OptimalPolicyFit fit = estimate_optimal_policy(d, shape_of(env.spec));
    for (int s = 0; s < 2; ++s) EXPECT_EQ(fit.policy.prob(scalar_point(s), 0), 1.0);
}

TEST(OptimalPolicy, ImprovesOnBehavior) {
    const Environment env = toy();
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.behavior, 200, 50, 23));
    const OptimalPolicyFit fit = estimate_optimal_policy(d, shape_of(env.spec));
    const OracleValues greedy = exact_tabular_oracle(env.spec, fit.policy, env.control, env.behavior);
    const OracleValues behav = exact_tabular_oracle(env.spec, env.behavior, env.control, env.behavior);
    EXPECT_GE(eta_of(greedy.eta, Regime::PiE), eta_of(behav.eta, Regime::PiE) - 0.05);
}

TEST(Crossfit, FixedPolicyReproducible) {
    const Environment env = toy();
    const auto trajs = sample_dataset(env.spec, env.behavior, 60, 40, 24);
    const DataShape shape = shape_of(env.spec);
    const CrossfitResult a = crossfit_policy_value(trajs, shape, env.control, 2, {}, &env.target);
    const CrossfitResult b = crossfit_policy_value(trajs, shape, env.control, 2, {}, &env.target);
    ASSERT_EQ(a.folds.size(), 2u);
    for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_EQ(a.estimate.effects.as_array()[j], b.estimate.effects.as_array()[j]);
        EXPECT_NEAR(a.estimate.effects.as_array()[j],
                    0.5 * (a.folds[0].effects.as_array()[j] + a.folds[1].effects.as_array()[j]), 1e-12);
        EXPECT_GT(a.estimate.se->as_array()[j], 0.0);
    }
    EXPECT_FALSE(a.folds[0].influence.has_value());
}

TEST(Crossfit, ControlAgainstItselfIsNearZero) {
    const Environment env = toy();
    const auto trajs = sample_dataset(env.spec, env.behavior, 60, 40, 25);
    const CrossfitResult r = crossfit_policy_value(trajs, shape_of(env.spec), env.control, 2, {}, &env.control);
    for (double v : r.estimate.effects.as_array()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Crossfit, FoldSplitting) {
    const Environment env = toy();
    const auto trajs = sample_dataset(env.spec, env.behavior, 5, 3, 26);
    const auto parts = split_folds(trajs, 2);
    EXPECT_EQ(parts[0].size(), 3u);
    EXPECT_EQ(parts[1].size(), 2u);
    EXPECT_THROW(split_folds(trajs, 1), std::invalid_argument);
    EXPECT_THROW(split_folds(trajs, 6), std::invalid_argument);
}
