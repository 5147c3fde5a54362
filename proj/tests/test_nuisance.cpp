#include "mmdp/environments.hpp"
#include "mmdp/nuisance.hpp"
#include "mmdp/oracle.hpp"
#include "mmdp/oracle_nuisance.hpp"
#include "mmdp/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mmdp;

namespace {

Environment toy() { return build_environment({EnvironmentKind::ToyBinary, 2.0}); }

TupleData toy_data(const Environment& env, int n, int horizon, std::uint64_t seed) {
    return make_tuple_data(sample_dataset(env.spec, env.behavior, n, horizon, seed));
}

NuisanceConfig fixed_lambda(double lambda) {
    NuisanceConfig cfg;
    cfg.lambda_grid = {lambda};
    return cfg;
}

}  // namespace

TEST(BehaviorPolicy, ConstantPolicyRecovered) {
    Environment env = toy();
    env.behavior = Policy::constant("half", (ActionProbs(2) << 0.5, 0.5).finished());
    const TupleData d = toy_data(env, 100, 1000, 1);
    const Policy pb = fit_behavior_policy(d.tuples, shape_of(env.spec));
    for (const auto& s : env.spec.state_support()) {
        EXPECT_GE(pb.prob(s, 1), 0.48);
        EXPECT_LE(pb.prob(s, 1), 0.52);
    }
}

TEST(BehaviorPolicy, ToyProbabilityAtStateOne) {
    const Environment env = toy();
    const TupleData d = toy_data(env, 100, 1000, 2);
    const Policy pb = fit_behavior_policy(d.tuples, shape_of(env.spec));
    EXPECT_NEAR(pb.prob(scalar_point(1.0), 1), expit(1.0 - 2.0), 0.02);
}

TEST(BehaviorPolicy, SingleActionRejected) {
    Environment env = toy();
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.control, 5, 20, 3));
    EXPECT_THROW(fit_behavior_policy(d.tuples, shape_of(env.spec)), std::invalid_argument);
    EXPECT_THROW(fit_behavior_policy({}, shape_of(env.spec)), std::invalid_argument);
}

TEST(BehaviorPolicy, ContinuousLogisticClipped) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.target, 50, 200, 4));
    const Policy pb = fit_behavior_policy(d.tuples, shape_of(env.spec));
    ASSERT_TRUE(pb.logistic_form().has_value());
    EXPECT_NEAR(pb.logistic_form()->weights[0], 0.7, 0.1);
    EXPECT_LE(pb.prob(scalar_point(100.0), 1), 0.99);
    EXPECT_GE(pb.prob(scalar_point(-100.0), 1), 0.01);
}

TEST(MediatorModel, ToyMassAtStateZeroActionOne) {
    const Environment env = toy();
    const TupleData d = toy_data(env, 100, 1000, 5);
    const MediatorModel pm = fit_mediator_model(d.tuples, shape_of(env.spec));
    EXPECT_NEAR(pm.density(scalar_point(1.0), scalar_point(0.0), 1), expit(3.5), 0.02);
    for (const auto& s : env.spec.state_support())
        for (int a = 0; a < 2; ++a) {
            double tot = 0.0;
            for (const auto& n : pm.nodes(s, a)) tot += n.weight;
            EXPECT_NEAR(tot, 1.0, 1e-12);
        }
    EXPECT_THROW(fit_mediator_model({}, shape_of(env.spec)), std::invalid_argument);
}

TEST(MediatorModel, GaussianMeansAndSd) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.behavior, 100, 1000, 6));
    const MediatorModel pm = fit_mediator_model(d.tuples, shape_of(env.spec));
    const Point s = scalar_point(1.0);
    Point mean = Point::Zero(2);
    for (const auto& n : pm.nodes(s, 1)) mean += n.weight * n.m;
    // Exact mean at s = 1, a = 1: (1 + .5, .25 - .5); the CRN bank adds MC noise sd*1/sqrt(100).
    EXPECT_NEAR(mean(0), 1.5, 0.6);
    EXPECT_NEAR(mean(1), -0.25, 0.6);
    const double dens = pm.density(make_point({1.5, -0.25}), s, 1);
    EXPECT_NEAR(dens, 1.0 / (2.0 * M_PI * 4.0), 0.01);
}

TEST(RewardModel, ConstantReward) {
    BinaryLogisticParams p;
    p.rew_c0 = 800.0;
    p.rew_cs = p.rew_ca = p.rew_cm = 0.0;
    const Environment env = make_binary_logistic_environment(p);
    const TupleData d = toy_data(env, 10, 500, 7);
    const DataShape sh = shape_of(env.spec);
    const LinearModel r = fit_reward_model(d.tuples, sh, make_joint_features(sh, d.tuples, {}));
    for (const auto& s : env.spec.state_support())
        for (int a = 0; a < 2; ++a)
            for (const auto& m : env.spec.mediator_support()) EXPECT_NEAR(r.value(s, a, m), 10.0, 0.02);
}

TEST(RewardModel, SemiSyntheticMeanRecovered) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.behavior, 100, 1000, 8));
    const DataShape sh = shape_of(env.spec);
    const LinearModel r = fit_reward_model(d.tuples, sh, make_joint_features(sh, d.tuples, {}));
    // The mean has a cusp at the origin in both s and m that an additive sieve
    // smooths over, so accuracy is checked where the data live.
    double ss = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < d.size(); i += 50, ++n) {
        const auto& t = d.tuples[i];
        const double e = r.value(t.s, t.a, t.m) - env.spec.reward_mean(t.s, t.a, t.m);
        ss += e * e;
    }
    EXPECT_LT(std::sqrt(ss / n), 0.15);
    EXPECT_NEAR(r.value(scalar_point(2.0), 1, make_point({1.0, -1.0})),
                env.spec.reward_mean(scalar_point(2.0), 1, make_point({1.0, -1.0})), 0.15);
}

TEST(MediatorRatio, Examples) {
    const Environment env = toy();
    const MediatorModel pm = MediatorModel::from_spec(env.spec, 100, 1);
    const Point s0 = scalar_point(0.0), m1 = scalar_point(1.0);
    const double expected =
        (env.target.prob(s0, 0) * expit(1.0) + env.target.prob(s0, 1) * expit(3.5)) / expit(1.0);
    EXPECT_NEAR(mediator_ratio(pm, env.target, s0, 0, m1), expected, 1e-12);
    for (const auto& s : env.spec.state_support())
        for (int a = 0; a < 2; ++a) {
            double e = 0.0;
            for (const auto& m : env.spec.mediator_support())
                e += pm.density(m, s, a) * mediator_ratio(pm, env.target, s, a, m);
            EXPECT_NEAR(e, 1.0, 1e-12);
        }
    BinaryLogisticParams p;
    p.med_ca = 0.0;
    const Environment flat = make_binary_logistic_environment(p);
    const MediatorModel pf = MediatorModel::from_spec(flat.spec, 100, 1);
    for (const auto& s : flat.spec.state_support())
        for (const auto& m : flat.spec.mediator_support())
            EXPECT_NEAR(mediator_ratio(pf, flat.target, s, 1, m), 1.0, 1e-12);
}

TEST(Ratio, BehaviorTargetGivesOne) {
    const Environment env = toy();
    const TupleData d = toy_data(env, 100, 1000, 9);
    const DataShape sh = shape_of(env.spec);
    const Policy pb = fit_behavior_policy(d.tuples, sh);
    const MediatorModel pm = fit_mediator_model(d.tuples, sh);
    const auto xi = make_state_features(sh, d.tuples, {});
    const RatioModel w = fit_ratio(d.tuples, Regime::PiE, pb, pm, env.behavior, env.control, xi);
    for (const auto& s : env.spec.state_support()) EXPECT_NEAR(w.value(s), 1.0, 0.05);
    EXPECT_LT(w.moment_residual, 1e-8);
    EXPECT_TRUE(w.warning.empty());
}

TEST(Ratio, ToyOddsRatioMatchesExact) {
    const Environment env = toy();
    const OracleValues o = exact_tabular_oracle(env.spec, env.target, env.control, env.behavior);
    const TupleData d = toy_data(env, 100, 1000, 10);
    const DataShape sh = shape_of(env.spec);
    const Policy pb = fit_behavior_policy(d.tuples, sh);
    const MediatorModel pm = fit_mediator_model(d.tuples, sh);
    const auto xi = make_state_features(sh, d.tuples, {});
    for (Regime r : {Regime::PiE, Regime::Pi0, Regime::G0, Regime::GTildeE}) {
        const RatioModel w = fit_ratio(d.tuples, r, pb, pm, env.target, env.control, xi);
        const Vector ex = o.ratio(r);
        const double fitted = w.value(scalar_point(1.0)) / w.value(scalar_point(0.0));
        EXPECT_NEAR(fitted / (ex(1) / ex(0)), 1.0, 0.10) << to_string(r);
        EXPECT_LT(w.moment_residual, 1e-8) << to_string(r);
        // mean one over the sample
        double mean = 0.0;
        for (const auto& t : d.tuples) mean += w.value(t.s);
        EXPECT_NEAR(mean / static_cast<double>(d.size()), 1.0, 1e-9);
    }
}

TEST(Ratio, IidStatesGiveOne) {
    const Environment env = build_environment({EnvironmentKind::ToyBinaryIidState, 2.0});
    const TupleData d = toy_data(env, 100, 1000, 11);
    const DataShape sh = shape_of(env.spec);
    const Policy pb = fit_behavior_policy(d.tuples, sh);
    const MediatorModel pm = fit_mediator_model(d.tuples, sh);
    const auto xi = make_state_features(sh, d.tuples, {});
    for (Regime r : {Regime::PiE, Regime::Pi0, Regime::G0}) {
        const RatioModel w = fit_ratio(d.tuples, r, pb, pm, env.target, env.control, xi);
        for (const auto& s : env.spec.state_support()) EXPECT_NEAR(w.value(s), 1.0, 0.05) << to_string(r);
    }
}

TEST(Ratio, ContinuousRatioHasUnitMean) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.behavior, 50, 50, 12));
    const DataShape sh = shape_of(env.spec);
    const Policy pb = fit_behavior_policy(d.tuples, sh);
    const MediatorModel pm = fit_mediator_model(d.tuples, sh);
    const auto xi = make_state_features(sh, d.tuples, {});
    EXPECT_EQ(xi->dim(), 64);
    const RatioModel w = fit_ratio(d.tuples, Regime::PiE, pb, pm, env.target, env.control, xi);
    double mean = 0.0, lo = 1e300;
    for (const auto& t : d.tuples) {
        mean += w.value(t.s);
        lo = std::min(lo, w.value(t.s));
    }
    EXPECT_NEAR(mean / static_cast<double>(d.size()), 1.0, 1e-9);
    EXPECT_GT(lo, 0.0);
}

TEST(Ratio, RankDeficientSystemWarns) {
    const Environment env = toy();
    // Every state is 0, so the one-hot column for state 1 is identically zero.
    std::vector<TransitionTuple> tuples;
    for (int i = 0; i < 50; ++i) tuples.push_back({scalar_point(0.0), i % 2, scalar_point(1.0), 1.0, scalar_point(0.0)});
    const auto xi = std::make_shared<OneHotFeatures>(1);
    const Vector w = Vector::Ones(50);
    const RatioModel r = fit_ratio_weighted(tuples, Regime::PiE, xi, w);
    EXPECT_FALSE(r.warning.empty());
    EXPECT_NEAR(r.value(scalar_point(0.0)), 1.0, 1e-6);
}

TEST(QEta, ConstantRewardGivesFlatQ) {
    BinaryLogisticParams p;
    p.rew_c0 = 800.0;
    p.rew_cs = p.rew_ca = p.rew_cm = 0.0;
    const Environment env = make_binary_logistic_environment(p);
    const TupleData d = toy_data(env, 20, 500, 13);
    const NuisanceSet ex = oracle_nuisances(env, 500);
    for (Regime r : kPrimaryRegimes) {
        const QModel q = fit_q_eta(d, r, ex.mediator, ex.reward, env.target, env.control, fixed_lambda(1e-10));
        EXPECT_NEAR(q.eta, 10.0, 1e-6) << to_string(r);
        for (const auto& s : env.spec.state_support())
            for (int a = 0; a < 2; ++a)
                for (const auto& m : env.spec.mediator_support()) EXPECT_NEAR(q.value(s, a, m), 0.0, 1e-6);
        EXPECT_LT(q.moment_residual, 1e-8);
    }
}

TEST(QEta, SaturatedFitMatchesExactTables) {
    const Environment env = toy();
    const OracleValues o = exact_tabular_oracle(env.spec, env.target, env.control, env.behavior);
    const TupleData d = toy_data(env, 100, 1000, 14);
    const NuisanceSet ex = oracle_nuisances(env, 1000);
    const TabularKernels k = tabulate(env.spec);
    // SE of eta-hat at this size is about .03 (spread over independent datasets),
    // so .1 is a 3-SE band.
    for (Regime r : {Regime::PiE, Regime::GE, Regime::PiE0, Regime::G0, Regime::Pi0}) {
        const QModel q = fit_q_eta(d, r, ex.mediator, ex.reward, env.target, env.control, fixed_lambda(1e-8));
        EXPECT_NEAR(q.eta, o.eta[static_cast<std::size_t>(regime_index(r))], 0.1) << to_string(r);
        EXPECT_LT(q.moment_residual, 1e-8);
        // Q is identified up to an additive constant; compare after centring,
        // weighting cells by how often the data visit them.
        const Vector& tab = o.q[static_cast<std::size_t>(regime_index(r))];
        Vector diff(k.cells()), freq = Vector::Zero(k.cells());
        for (const auto& t : d.tuples) freq(k.cell(binary_index(t.s), t.a, binary_index(t.m))) += 1.0;
        freq /= freq.sum();
        for (int s = 0; s < k.n_s; ++s)
            for (int a = 0; a < k.n_a; ++a)
                for (int m = 0; m < k.n_m; ++m)
                    diff(k.cell(s, a, m)) = q.value(k.states[s], a, k.mediators[m]) - tab(k.cell(s, a, m));
        const Vector centred = diff.array() - freq.dot(diff);
        EXPECT_LT(std::sqrt(freq.dot(centred.cwiseAbs2())), 0.1) << to_string(r);
    }
}

TEST(QEta, CrossValidationPicksFromGrid) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 2.0});
    const TupleData d = make_tuple_data(sample_dataset(env.spec, env.behavior, 40, 25, 15));
    const NuisanceConfig cfg;
    const NuisanceSet ns = fit_nuisances(d, shape_of(env.spec), env.target, env.control, cfg);
    for (Regime r : kPrimaryRegimes) {
        const QModel& q = ns.q_for(r);
        EXPECT_NE(std::find(cfg.lambda_grid.begin(), cfg.lambda_grid.end(), q.lambda), cfg.lambda_grid.end());
        EXPECT_LT(q.moment_residual, 1e-8);
        EXPECT_TRUE(std::isfinite(q.eta));
    }
    EXPECT_FALSE(ns.has_q(Regime::Pi0E));
    EXPECT_TRUE(ns.has_ratio(Regime::GE));
}

TEST(QEta, TooFewSamplesRejected) {
    const Environment env = toy();
    const TupleData d = toy_data(env, 1, 5, 16);
    const NuisanceSet ex = oracle_nuisances(env, 5);
    EXPECT_THROW(fit_q_eta(d, Regime::PiE, ex.mediator, ex.reward, env.target, env.control), std::invalid_argument);
}

TEST(FitNuisances, DeterministicAndComplete) {
    const Environment env = toy();
    const TupleData d = toy_data(env, 50, 50, 17);
    const NuisanceSet a = fit_nuisances(d, shape_of(env.spec), env.target, env.control, {}, {true});
    const NuisanceSet b = fit_nuisances(d, shape_of(env.spec), env.target, env.control, {}, {true});
    for (int i = 0; i < kRegimeCount; ++i) {
        const auto r = static_cast<Regime>(i);
        ASSERT_TRUE(a.has_q(r));
        EXPECT_EQ(a.q_for(r).eta, b.q_for(r).eta);
        EXPECT_TRUE(a.has_ratio(r));
    }
    EXPECT_EQ(a.provenance, Provenance::Fitted);
}

TEST(OracleNuisances, TablesMatchEnvironment) {
    const Environment env = toy();
    const NuisanceSet ns = oracle_nuisances(env, 50);
    const OracleValues o = exact_tabular_oracle(env.spec, env.target, env.control, env.behavior);
    EXPECT_EQ(ns.provenance, Provenance::Oracle);
    for (const auto& s : env.spec.state_support())
        for (int a = 0; a < 2; ++a)
            for (const auto& m : env.spec.mediator_support()) {
                EXPECT_NEAR(ns.reward.value(s, a, m), env.spec.reward_mean(s, a, m), 1e-12);
                EXPECT_NEAR(ns.mediator.density(m, s, a), env.spec.mediator_density(m, s, a), 1e-12);
            }
    EXPECT_NEAR(ns.q_for(Regime::G0).eta, eta_of(o.eta, Regime::G0), 1e-12);
    // Long horizons recover the stationary ratio.
    const NuisanceSet lng = oracle_nuisances(env, 100000);
    EXPECT_NEAR(lng.ratio(Regime::PiE).value(scalar_point(1.0)), o.ratio(Regime::PiE)(1), 1e-4);
}
