#pragma once

#include "mmdp/policy.hpp"
#include "mmdp/regime.hpp"
#include "mmdp/rng.hpp"
#include "mmdp/simulate.hpp"
#include "mmdp/spec.hpp"
#include "mmdp/tabular.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mmdp {

/// The four effect components and their sum. For the alternative
/// decomposition the fields hold IDE2, IME2, DDE2, DME2 respectively.
struct EffectValues {
    double ide = 0.0;
    double ime = 0.0;
    double dde = 0.0;
    double dme = 0.0;
    double ate = 0.0;

    std::array<double, 5> as_array() const { return {ide, ime, dde, dme, ate}; }
};

inline constexpr std::array<const char*, 5> kEffectNames{"IDE", "IME", "DDE", "DME", "ATE"};

using EtaArray = std::array<double, kRegimeCount>;

inline double eta_of(const EtaArray& eta, Regime r) { return eta[static_cast<std::size_t>(regime_index(r))]; }

/// Consecutive differences along PiE -> GE -> PiE0 -> G0 -> Pi0.
inline EffectValues effects_from_etas(const EtaArray& eta) {
    EffectValues e;
    e.ide = eta_of(eta, Regime::PiE) - eta_of(eta, Regime::GE);
    e.ime = eta_of(eta, Regime::GE) - eta_of(eta, Regime::PiE0);
    e.dde = eta_of(eta, Regime::PiE0) - eta_of(eta, Regime::G0);
    e.dme = eta_of(eta, Regime::G0) - eta_of(eta, Regime::Pi0);
    e.ate = e.ide + e.ime + e.dde + e.dme;
    return e;
}

/// Consecutive differences along PiE -> GTildeE -> Pi0E -> GTilde0 -> Pi0.
inline EffectValues alternative_effects_from_etas(const EtaArray& eta) {
    EffectValues e;
    e.dme = eta_of(eta, Regime::PiE) - eta_of(eta, Regime::GTildeE);
    e.dde = eta_of(eta, Regime::GTildeE) - eta_of(eta, Regime::Pi0E);
    e.ime = eta_of(eta, Regime::Pi0E) - eta_of(eta, Regime::GTilde0);
    e.ide = eta_of(eta, Regime::GTilde0) - eta_of(eta, Regime::Pi0);
    e.ate = e.ide + e.ime + e.dde + e.dme;
    return e;
}

struct OracleValues {
    bool exact = true;
    EtaArray eta{};
    EtaArray eta_se{};  // zero for exact solves
    EffectValues effects;
    EffectValues effects_se;
    EffectValues alternative;
    EffectValues alternative_se;
    std::int64_t n_traj = 0;
    int horizon = 0;
    int burn_in = 0;

    // Finite case only.
    PolicyTables policies;
    std::array<Vector, kRegimeCount> state_dist;
    std::array<Vector, kRegimeCount> q;
    Vector behavior_dist;

    /// Stationary ratio p^regime(s) / p^{pi_b}(s) (finite case).
    Vector ratio(Regime r) const {
        const Vector& d = state_dist[static_cast<std::size_t>(regime_index(r))];
        if (d.size() == 0 || behavior_dist.size() == 0) throw std::logic_error("ratio: no tabular state laws");
        return d.cwiseQuotient(behavior_dist);
    }
};

/// Exact oracle for finite environments.
inline OracleValues exact_tabular_oracle(const MmdpSpec& spec, const Policy& target, const Policy& control,
                                         const Policy& behavior) {
    const TabularKernels k = tabulate(spec);
    OracleValues out;
    out.exact = true;
    out.policies = {policy_table(target, k.states), policy_table(control, k.states), policy_table(behavior, k.states)};
    for (int i = 0; i < kRegimeCount; ++i) {
        const RegimeSolution sol = solve_regime(k, out.policies, static_cast<Regime>(i));
        out.eta[static_cast<std::size_t>(i)] = sol.eta;
        out.state_dist[static_cast<std::size_t>(i)] = sol.state_dist;
        out.q[static_cast<std::size_t>(i)] = sol.q;
    }
    out.behavior_dist = tabular::stationary(tabular::state_chain(k, out.policies, behavior_law()));
    out.effects = effects_from_etas(out.eta);
    out.alternative = alternative_effects_from_etas(out.eta);
    return out;
}

/// Maximum Bellman residual of the oracle's (Q, eta) for a regime.
inline double oracle_q_check(const OracleValues& oracle, const MmdpSpec& spec, Regime regime) {
    if (!oracle.exact) throw std::logic_error("oracle_q_check needs an exact oracle");
    const TabularKernels k = tabulate(spec);
    const auto i = static_cast<std::size_t>(regime_index(regime));
    return bellman_residual(k, oracle.policies, regime_law(regime), oracle.q[i], oracle.eta[i]);
}

namespace detail {

inline constexpr std::uint64_t kPseudoRewardStream = 0x7073722D647277ULL;

/// sum_a pi(a|s) E_{m ~ p_m(.|s,a)} r(s,a,m): exact over a finite mediator
/// support, one draw per action otherwise.
inline double resampled_reward(const MmdpSpec& spec, const Policy& pi, const Point& s, Rng& rng) {
    const ActionProbs p = pi.probs(s);
    double v = 0.0;
    if (spec.mediator_kind == SpaceKind::FiniteBinary) {
        const auto meds = spec.mediator_support();
        for (int a = 0; a < p.size(); ++a) {
            if (p(a) == 0.0) continue;
            double inner = 0.0;
            for (const auto& m : meds) inner += spec.mediator_density(m, s, a) * spec.reward_mean(s, a, m);
            v += p(a) * inner;
        }
        return v;
    }
    for (int a = 0; a < p.size(); ++a) {
        if (p(a) == 0.0) continue;
        v += p(a) * spec.reward_mean(s, a, spec.sample_mediator(s, a, rng));
    }
    return v;
}

inline double kept_reward(const MmdpSpec& spec, const Policy& pi, const Point& s, const Point& m) {
    const ActionProbs p = pi.probs(s);
    double v = 0.0;
    for (int a = 0; a < p.size(); ++a)
        if (p(a) != 0.0) v += p(a) * spec.reward_mean(s, a, m);
    return v;
}

}  // namespace detail

/// Monte Carlo oracle: each regime's eta is the average pseudo-reward along
/// its interventional trajectories after burn_in steps (default horizon/10).
/// All regimes of one trajectory index share the seed stream, so effect SEs
/// come from paired per-trajectory differences.
inline OracleValues mc_oracle(const MmdpSpec& spec, const Policy& target, const Policy& control, int n_traj,
                              int horizon, std::uint64_t seed, int burn_in = -1) {
    if (n_traj < 1 || horizon < 1) throw std::invalid_argument("mc_oracle: n_traj and horizon must be >= 1");
    if (burn_in < 0) burn_in = horizon / 10;
    if (burn_in >= horizon) throw std::invalid_argument("mc_oracle: burn_in must be < horizon");

    std::vector<EtaArray> per(static_cast<std::size_t>(n_traj));
#pragma omp parallel for schedule(dynamic, 8)
    for (int i = 0; i < n_traj; ++i) {
        Rng side(derive_seed({seed, static_cast<std::uint64_t>(i), detail::kPseudoRewardStream}));
        const Trajectory te = detail::simulate_chain(spec, target, nullptr, horizon, seed, i);
        const Trajectory tg0 = detail::simulate_chain(spec, control, &target, horizon, seed, i);
        const Trajectory t0 = detail::simulate_chain(spec, control, nullptr, horizon, seed, i);
        const Trajectory tgt = detail::simulate_chain(spec, target, &control, horizon, seed, i);
        EtaArray acc{};
        auto add = [&acc](Regime r, double v) { acc[static_cast<std::size_t>(regime_index(r))] += v; };
        for (int t = burn_in; t < horizon; ++t) {
            const auto& e = te.steps[static_cast<std::size_t>(t)];
            add(Regime::PiE, spec.reward_mean(e.s, e.a, e.m));
            add(Regime::GE, detail::kept_reward(spec, control, e.s, e.m));
            add(Regime::PiE0, detail::resampled_reward(spec, control, e.s, side));
            const auto& g = tg0.steps[static_cast<std::size_t>(t)];
            add(Regime::G0, detail::resampled_reward(spec, control, g.s, side));
            const auto& z = t0.steps[static_cast<std::size_t>(t)];
            add(Regime::Pi0, spec.reward_mean(z.s, z.a, z.m));
            add(Regime::Pi0E, detail::resampled_reward(spec, target, z.s, side));
            add(Regime::GTilde0, detail::kept_reward(spec, target, z.s, z.m));
            const auto& h = tgt.steps[static_cast<std::size_t>(t)];
            add(Regime::GTildeE, detail::resampled_reward(spec, target, h.s, side));
        }
        for (auto& v : acc) v /= static_cast<double>(horizon - burn_in);
        per[static_cast<std::size_t>(i)] = acc;
    }

    OracleValues out;
    out.exact = false;
    out.n_traj = n_traj;
    out.horizon = horizon;
    out.burn_in = burn_in;
    const double n = static_cast<double>(n_traj);
    auto mean_se = [n](const std::vector<double>& x) {
        double mu = 0.0;
        for (double v : x) mu += v;
        mu /= n;
        double ss = 0.0;
        for (double v : x) ss += (v - mu) * (v - mu);
        const double se = x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
        return std::pair<double, double>{mu, se};
    };
    std::vector<double> col(static_cast<std::size_t>(n_traj));
    for (int r = 0; r < kRegimeCount; ++r) {
        for (int i = 0; i < n_traj; ++i) col[static_cast<std::size_t>(i)] = per[static_cast<std::size_t>(i)][static_cast<std::size_t>(r)];
        const auto [mu, se] = mean_se(col);
        out.eta[static_cast<std::size_t>(r)] = mu;
        out.eta_se[static_cast<std::size_t>(r)] = se;
    }
    out.effects = effects_from_etas(out.eta);
    out.alternative = alternative_effects_from_etas(out.eta);

    auto effect_se = [&](auto&& fn) {
        std::array<std::vector<double>, 5> cols;
        for (auto& c : cols) c.resize(static_cast<std::size_t>(n_traj));
        for (int i = 0; i < n_traj; ++i) {
            const auto v = fn(per[static_cast<std::size_t>(i)]).as_array();
            for (std::size_t j = 0; j < 5; ++j) cols[j][static_cast<std::size_t>(i)] = v[j];
        }
        EffectValues se;
        se.ide = mean_se(cols[0]).second;
        se.ime = mean_se(cols[1]).second;
        se.dde = mean_se(cols[2]).second;
        se.dme = mean_se(cols[3]).second;
        se.ate = mean_se(cols[4]).second;
        return se;
    };
    out.effects_se = effect_se(effects_from_etas);
    out.alternative_se = effect_se(alternative_effects_from_etas);
    return out;
}

}  // namespace mmdp
