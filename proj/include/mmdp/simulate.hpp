#pragma once

#include "mmdp/policy.hpp"
#include "mmdp/regime.hpp"
#include "mmdp/rng.hpp"
#include "mmdp/spec.hpp"
#include "mmdp/types.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mmdp {

namespace detail {

// Separate stream for the action that drives an interventional mediator draw,
// so the main stream is consumed identically to an ordinary trajectory.
inline constexpr std::uint64_t kMediatorActionStream = 0x6D65642D616374ULL;

inline Trajectory simulate_chain(const MmdpSpec& spec, const Policy& action_policy, const Policy* mediator_policy,
                                 int horizon, std::uint64_t seed, std::int64_t traj_id) {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    Trajectory traj;
    traj.id = traj_id;
    traj.seed = seed;
    traj.steps.reserve(static_cast<std::size_t>(horizon));
    Rng rng(seed, static_cast<std::uint64_t>(traj_id));
    Rng side(derive_seed({seed, static_cast<std::uint64_t>(traj_id), kMediatorActionStream}));

    Point s = spec.sample_initial(rng);
    for (int t = 0; t < horizon; ++t) {
        const ActionProbs pa = action_policy.probs(s);
        const int a = draw_categorical({pa.data(), static_cast<std::size_t>(pa.size())}, rng);
        int a_med = a;
        if (mediator_policy != nullptr) {
            const ActionProbs pm = mediator_policy->probs(s);
            a_med = draw_categorical({pm.data(), static_cast<std::size_t>(pm.size())}, side);
        }
        Point m = spec.sample_mediator(s, a_med, rng);
        auto [s_next, r] = spec.sample_outcome(s, a, m, rng);
        traj.steps.push_back(TransitionTuple{s, a, std::move(m), r, s_next});
        s = std::move(s_next);
    }
    return traj;
}

}  // namespace detail

/// Roll out one trajectory: S0 ~ nu, A ~ policy, M ~ p_m, (S', R) ~ p_{s',r}.
/// Deterministic given (seed, traj_id).
inline Trajectory sample_trajectory(const MmdpSpec& spec, const Policy& policy, int horizon, std::uint64_t seed,
                                    std::int64_t traj_id = 0) {
    return detail::simulate_chain(spec, policy, nullptr, horizon, seed, traj_id);
}

/// Roll out the historical dynamics of an interventional regime. Only regimes
/// whose dynamics are not an ordinary policy rollout are accepted: G_e (target
/// dynamics), G_0 (control actions, target-driven mediators) and G~_e (target
/// actions, control-driven mediators).
inline Trajectory sample_interventional_trajectory(const MmdpSpec& spec, Regime regime, const Policy& target,
                                                   const Policy& control, int horizon, std::uint64_t seed,
                                                   std::int64_t traj_id = 0) {
    switch (regime) {
        case Regime::GE: return detail::simulate_chain(spec, target, nullptr, horizon, seed, traj_id);
        case Regime::G0: return detail::simulate_chain(spec, control, &target, horizon, seed, traj_id);
        case Regime::GTildeE: return detail::simulate_chain(spec, target, &control, horizon, seed, traj_id);
        default:
            throw std::invalid_argument("sample_interventional_trajectory: regime " + to_string(regime) +
                                        " is an ordinary policy rollout; use sample_trajectory");
    }
}

/// N independent trajectories with ids 0..N-1.
inline std::vector<Trajectory> sample_dataset(const MmdpSpec& spec, const Policy& policy, int n_traj, int horizon,
                                              std::uint64_t seed) {
    if (n_traj < 1) throw std::invalid_argument("n_traj must be >= 1");
    std::vector<Trajectory> out(static_cast<std::size_t>(n_traj));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_traj; ++i) out[static_cast<std::size_t>(i)] = sample_trajectory(spec, policy, horizon, seed, i);
    return out;
}

}  // namespace mmdp
