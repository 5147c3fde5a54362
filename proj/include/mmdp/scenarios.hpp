#pragma once

#include "mmdp/estimators.hpp"
#include "mmdp/models.hpp"
#include "mmdp/nuisance.hpp"
#include "mmdp/rng.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdp {

enum class CorruptionScenario { AllCorrect, OnlyM1, OnlyM2, OnlyM3, AllWrong };

inline constexpr std::array<CorruptionScenario, 5> kAllScenarios{
    CorruptionScenario::AllCorrect, CorruptionScenario::OnlyM1, CorruptionScenario::OnlyM2,
    CorruptionScenario::OnlyM3, CorruptionScenario::AllWrong};

inline std::string to_string(CorruptionScenario s) {
    switch (s) {
        case CorruptionScenario::AllCorrect: return "all-correct";
        case CorruptionScenario::OnlyM1: return "m1";
        case CorruptionScenario::OnlyM2: return "m2";
        case CorruptionScenario::OnlyM3: return "m3";
        case CorruptionScenario::AllWrong: return "all-wrong";
    }
    return "?";
}

inline CorruptionScenario scenario_from_string(const std::string& s) {
    for (CorruptionScenario c : kAllScenarios)
        if (to_string(c) == s) return c;
    throw std::invalid_argument("unknown corruption scenario: " + s);
}

/// Which nuisance groups keep their exact values under a scenario.
struct ProtectedSet {
    bool omega_target = false;  // omega^{pi_e}
    bool omega_other = false;   // omega^{pi_0}, omega^{G_0}, omega^{G~}
    bool behavior = false;
    bool mediator = false;
    bool reward = false;
    bool q = false;             // every (Q, eta) pair
};

inline ProtectedSet protected_set(CorruptionScenario s) {
    switch (s) {
        case CorruptionScenario::AllCorrect: return {true, true, true, true, true, true};
        case CorruptionScenario::OnlyM1: return {true, false, true, false, true, false};
        case CorruptionScenario::OnlyM2: return {true, true, true, true, false, false};
        case CorruptionScenario::OnlyM3: return {false, false, false, true, true, true};
        case CorruptionScenario::AllWrong: return {};
    }
    throw std::invalid_argument("unknown corruption scenario");
}

struct CorruptionConfig {
    double omega_target_shift = 0.25;
    double omega_other_shift = 0.3;
    double noise_sd = 0.5;       // Gaussian noise on Q, eta and r parameters
    double mult_lo = 0.5;        // multiplicative Uniform(lo, hi) on p_m and pi_b
    double mult_hi = 1.5;
    double clip_lo = 0.01;
    double clip_hi = 0.99;
    std::uint64_t seed = 20240601;
};

namespace detail {

inline double state_sign(const Point& s) { return s(0) > 0.5 ? 1.0 : -1.0; }

}  // namespace detail

/// Replace every nuisance outside the scenario's protected set by a
/// perturbed copy. Ratios are shifted by +/- a constant depending on the
/// state's first coordinate (+ on 1 for omega^{pi_e}, - on 1 for the others);
/// Q, eta and r get Gaussian parameter noise; p_m and pi_b masses are scaled
/// by Uniform(lo, hi) and clipped. The noise draws depend only on cfg.seed.
inline NuisanceSet corrupt_nuisances(const NuisanceSet& exact, CorruptionScenario scenario, const DataShape& shape,
                                     const CorruptionConfig& cfg = {}) {
    if (!shape.finite()) throw std::invalid_argument("corrupt_nuisances: corruptions are defined for finite environments");
    if (scenario == CorruptionScenario::AllCorrect) return exact;
    exact.require_basics();
    const ProtectedSet keep = protected_set(scenario);
    NuisanceSet out = exact;
    out.provenance = Provenance::Corrupted;
    const auto states = enumerate_binary(shape.state_dim);
    const auto mediators = enumerate_binary(shape.mediator_dim);
    const int K = shape.action_count;

    // One independent stream per nuisance group keeps each perturbation fixed
    // whatever else a scenario corrupts.
    auto stream = [&](std::uint64_t tag) { return Rng(cfg.seed, tag); };

    for (Regime r : kRatioTargets) {
        auto& slot = out.ratios[static_cast<std::size_t>(regime_index(r))];
        if (!slot) continue;
        const bool target = r == Regime::PiE;
        if (target ? keep.omega_target : keep.omega_other) continue;
        const double shift = target ? cfg.omega_target_shift : -cfg.omega_other_shift;
        RatioModel m = *slot;
        if (m.xi->dim() != static_cast<int>(states.size()))
            throw std::invalid_argument("corrupt_nuisances: ratio model is not tabular");
        // Shift omega itself: beta lives on the one-hot scale, divided by norm.
        for (const auto& s : states) m.beta(binary_index(s)) += detail::state_sign(s) * shift * m.norm;
        slot = m;
    }

    if (!keep.q) {
        Rng rng = stream(1);
        for (int i = 0; i < kRegimeCount; ++i) {
            auto& slot = out.q[static_cast<std::size_t>(i)];
            if (!slot) continue;
            QModel q = *slot;
            for (Eigen::Index c = 0; c < q.q.coef.size(); ++c) q.q.coef.data()[c] += cfg.noise_sd * draw_normal(rng);
            q.eta += cfg.noise_sd * draw_normal(rng);
            slot = q;
        }
    }

    if (!keep.reward) {
        Rng rng = stream(2);
        LinearModel r = out.reward;
        for (Eigen::Index c = 0; c < r.coef.size(); ++c) r.coef.data()[c] += cfg.noise_sd * draw_normal(rng);
        out.reward = r;
    }

    if (!keep.mediator) {
        Rng rng = stream(3);
        const int n_m = static_cast<int>(mediators.size());
        std::vector<double> table(states.size() * static_cast<std::size_t>(K * n_m));
        for (std::size_t s = 0; s < states.size(); ++s)
            for (int a = 0; a < K; ++a) {
                const std::size_t base = (s * static_cast<std::size_t>(K) + static_cast<std::size_t>(a)) * n_m;
                if (n_m == 2) {
                    // binary mediator: perturb Pr(M=1), complement follows
                    double p1 = exact.mediator.density(mediators[1], states[s], a);
                    p1 *= cfg.mult_lo + (cfg.mult_hi - cfg.mult_lo) * rng.uniform();
                    p1 = std::clamp(p1, cfg.clip_lo, cfg.clip_hi);
                    table[base] = 1.0 - p1;
                    table[base + 1] = p1;
                } else {
                    double z = 0.0;
                    for (int m = 0; m < n_m; ++m) {
                        double p = exact.mediator.density(mediators[static_cast<std::size_t>(m)], states[s], a);
                        p *= cfg.mult_lo + (cfg.mult_hi - cfg.mult_lo) * rng.uniform();
                        p = std::clamp(p, cfg.clip_lo, cfg.clip_hi);
                        table[base + static_cast<std::size_t>(m)] = p;
                        z += p;
                    }
                    for (int m = 0; m < n_m; ++m) table[base + static_cast<std::size_t>(m)] /= z;
                }
            }
        out.mediator = MediatorModel::tabular(shape.mediator_dim, K, std::move(table));
    }

    if (!keep.behavior) {
        Rng rng = stream(4);
        std::vector<ActionProbs> table;
        for (const auto& s : states) {
            ActionProbs p = exact.behavior.probs(s);
            if (K == 2) {
                double p1 = p(1) * (cfg.mult_lo + (cfg.mult_hi - cfg.mult_lo) * rng.uniform());
                p1 = std::clamp(p1, cfg.clip_lo, cfg.clip_hi);
                p << 1.0 - p1, p1;
            } else {
                for (int a = 0; a < K; ++a)
                    p(a) = std::clamp(p(a) * (cfg.mult_lo + (cfg.mult_hi - cfg.mult_lo) * rng.uniform()), cfg.clip_lo,
                                      cfg.clip_hi);
                p /= p.sum();
            }
            table.push_back(p);
        }
        out.behavior = Policy("behavior-corrupted", K,
                              [table](const Point& s) { return table[static_cast<std::size_t>(binary_index(s))]; });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Single-stage optimal policy

/// argmax_a E_{m ~ p_m(.|s,a)} Q(s, a, m), with Q the relative value of the
/// behavior process (observed rewards, next-step actions from the fitted
/// behavior policy). Ties go to the smaller action index.
inline Policy greedy_policy(const QModel& q, const MediatorModel& pm, int action_count, double tie_tol = 1e-9) {
    return Policy("greedy", action_count, [q, pm, action_count, tie_tol](const Point& s) {
        auto value = [&](int a) {
            double v = 0.0;
            for (const auto& node : pm.nodes(s, a)) v += node.weight * q.value(s, a, node.m);
            return v;
        };
        int best = 0;
        double best_v = value(0);
        for (int a = 1; a < action_count; ++a) {
            const double v = value(a);
            if (v > best_v + tie_tol * std::max(1.0, std::abs(best_v))) {
                best_v = v;
                best = a;
            }
        }
        ActionProbs p = ActionProbs::Zero(action_count);
        p(best) = 1.0;
        return p;
    });
}

struct OptimalPolicyFit {
    Policy policy;
    QModel q;
    MediatorModel mediator;
    Policy behavior;
};

inline OptimalPolicyFit estimate_optimal_policy(const TupleData& data, const DataShape& shape,
                                                const NuisanceConfig& cfg = {}) {
    OptimalPolicyFit out;
    out.behavior = fit_behavior_policy(data.tuples, shape, cfg);
    out.mediator = fit_mediator_model(data.tuples, shape, cfg);
    const FeatureMapPtr phi = make_joint_features(shape, data.tuples, cfg);
    const LinearModel reward = fit_reward_model(data.tuples, shape, phi, cfg);
    const FeatureCache fc = build_feature_cache(data.tuples, phi, out.mediator, shape.action_count);
    const RewardCache rc = build_reward_cache(fc, reward);
    const PolicyCache cb = build_policy_cache(data.tuples, out.behavior);
    // The regime tag is nominal: this law is not one of the effect regimes.
    out.q = fit_q_eta_cached(data, fc, rc, behavior_law(), Regime::PiE, RoleCaches{nullptr, nullptr, &cb}, cfg);
    out.policy = greedy_policy(out.q, out.mediator, shape.action_count);
    return out;
}

/// Split trajectories into folds by index modulo the fold count.
inline std::vector<std::vector<Trajectory>> split_folds(const std::vector<Trajectory>& trajectories, int folds) {
    if (folds < 2) throw std::invalid_argument("need at least two folds");
    if (static_cast<int>(trajectories.size()) < folds)
        throw std::invalid_argument("fewer trajectories than folds");
    std::vector<std::vector<Trajectory>> out(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < trajectories.size(); ++i) out[i % static_cast<std::size_t>(folds)].push_back(trajectories[i]);
    return out;
}

struct CrossfitResult {
    EffectEstimate estimate;          // fold average
    std::vector<EffectEstimate> folds;
    std::vector<Policy> policies;
};

/// Fit the greedy policy on each fold and evaluate it against pi_0 by MR on
/// the remaining folds; average the fold estimates. SEs combine as
/// sqrt(mean(se^2) / folds). A fixed policy can be passed to skip the fit.
inline CrossfitResult crossfit_policy_value(const std::vector<Trajectory>& trajectories, const DataShape& shape,
                                            const Policy& pi_0, int folds = 2, const NuisanceConfig& cfg = {},
                                            const Policy* fixed_policy = nullptr) {
    const auto parts = split_folds(trajectories, folds);
    CrossfitResult res;
    std::array<double, 5> mean{}, var{};
    EtaArray eta{};
    for (int k = 0; k < folds; ++k) {
        const TupleData fit_data = make_tuple_data(parts[static_cast<std::size_t>(k)]);
        std::vector<Trajectory> rest;
        for (int j = 0; j < folds; ++j)
            if (j != k) rest.insert(rest.end(), parts[static_cast<std::size_t>(j)].begin(), parts[static_cast<std::size_t>(j)].end());
        const TupleData eval_data = make_tuple_data(rest);
        const Policy pi_opt = fixed_policy != nullptr ? *fixed_policy : estimate_optimal_policy(fit_data, shape, cfg).policy;
        const NuisanceSet ns = fit_nuisances(eval_data, shape, pi_opt, pi_0, cfg);
        const EstimationContext ctx(eval_data, ns, pi_opt, pi_0);
        EffectEstimate e = mr_effects(ctx);
        const auto p = e.effects.as_array();
        const auto s = e.se->as_array();
        for (std::size_t j = 0; j < 5; ++j) {
            mean[j] += p[j] / folds;
            var[j] += s[j] * s[j] / folds;
        }
        for (std::size_t j = 0; j < eta.size(); ++j) eta[j] += e.eta[j] / folds;
        e.influence.reset();
        res.folds.push_back(std::move(e));
        res.policies.push_back(pi_opt);
    }
    EffectEstimate& out = res.estimate;
    out.kind = EstimatorKind::MR;
    out.eta = eta;
    out.effects = {mean[0], mean[1], mean[2], mean[3], mean[0] + mean[1] + mean[2] + mean[3]};
    EffectValues se;
    se.ide = std::sqrt(var[0] / folds);
    se.ime = std::sqrt(var[1] / folds);
    se.dde = std::sqrt(var[2] / folds);
    se.dme = std::sqrt(var[3] / folds);
    se.ate = std::sqrt(var[4] / folds);
    out.se = se;
    return res;
}

}  // namespace mmdp
