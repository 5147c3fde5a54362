#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace mmdp {

/// Reward-generating processes whose average rewards telescope into the
/// effect components. The first five give the primary decomposition
/// (PiE -> GE -> PiE0 -> G0 -> Pi0); the last three, together with PiE and
/// Pi0, give the alternative one (PiE -> GTildeE -> Pi0E -> GTilde0 -> Pi0).
enum class Regime {
    PiE,      // target policy throughout
    GE,       // target history; current action from control, mediator as under target
    PiE0,     // target history; control at the current step
    G0,       // control actions with target-driven mediators in history; control now
    Pi0,      // control policy throughout
    GTildeE,  // target actions with control-driven mediators in history; target now
    Pi0E,     // control history; target at the current step
    GTilde0,  // control history; current action from target, mediator as under control
};

inline constexpr std::array<Regime, 5> kPrimaryRegimes{Regime::PiE, Regime::GE, Regime::PiE0, Regime::G0,
                                                       Regime::Pi0};
inline constexpr std::array<Regime, 3> kAlternativeRegimes{Regime::GTildeE, Regime::Pi0E, Regime::GTilde0};
inline constexpr int kRegimeCount = 8;

/// Which policy an action (or mediator-driving action) is drawn from.
enum class PolicyRole { Target, Control, Behavior };

/// How the mediator is drawn in the historical dynamics.
enum class MediatorLaw {
    FromAction,  // m ~ p_m(. | s, a) for the action actually taken
    Mixture,     // m ~ sum_a' pi(a'|s) p_m(. | s, a') for the law's mixture policy
};

/// Pseudo-reward attached to a step.
enum class RewardKind {
    Observed,        // R (or r(s, a, m) in expectation)
    KeepMediator,    // r(s, pi, m) = sum_a pi(a|s) r(s, a, m)
    ResampleBoth,    // r(s, pi) = sum_a pi(a|s) sum_m p_m(m|s,a) r(s, a, m)
};

/// Dynamics and pseudo-reward of one regime.
struct RegimeLaw {
    PolicyRole action = PolicyRole::Target;
    MediatorLaw mediator = MediatorLaw::FromAction;
    PolicyRole mediator_policy = PolicyRole::Target;  // only for Mixture
    RewardKind reward = RewardKind::Observed;
    PolicyRole reward_policy = PolicyRole::Target;    // only for KeepMediator/ResampleBoth
};

inline RegimeLaw regime_law(Regime r) {
    using P = PolicyRole;
    switch (r) {
        case Regime::PiE: return {P::Target, MediatorLaw::FromAction, P::Target, RewardKind::Observed, P::Target};
        case Regime::GE: return {P::Target, MediatorLaw::FromAction, P::Target, RewardKind::KeepMediator, P::Control};
        case Regime::PiE0:
            return {P::Target, MediatorLaw::FromAction, P::Target, RewardKind::ResampleBoth, P::Control};
        case Regime::G0: return {P::Control, MediatorLaw::Mixture, P::Target, RewardKind::ResampleBoth, P::Control};
        case Regime::Pi0: return {P::Control, MediatorLaw::FromAction, P::Control, RewardKind::Observed, P::Control};
        case Regime::GTildeE:
            return {P::Target, MediatorLaw::Mixture, P::Control, RewardKind::ResampleBoth, P::Target};
        case Regime::Pi0E:
            return {P::Control, MediatorLaw::FromAction, P::Control, RewardKind::ResampleBoth, P::Target};
        case Regime::GTilde0:
            return {P::Control, MediatorLaw::FromAction, P::Control, RewardKind::KeepMediator, P::Target};
    }
    throw std::invalid_argument("unknown regime");
}

/// Law used to fit the single-stage policy-optimisation Q-function: the
/// behavior process with observed rewards.
inline RegimeLaw behavior_law() {
    return {PolicyRole::Behavior, MediatorLaw::FromAction, PolicyRole::Behavior, RewardKind::Observed,
            PolicyRole::Behavior};
}

inline int regime_index(Regime r) { return static_cast<int>(r); }

inline std::string to_string(Regime r) {
    switch (r) {
        case Regime::PiE: return "pi_e";
        case Regime::GE: return "G_e";
        case Regime::PiE0: return "pi_e0";
        case Regime::G0: return "G_0";
        case Regime::Pi0: return "pi_0";
        case Regime::GTildeE: return "Gtilde_e";
        case Regime::Pi0E: return "pi_0e";
        case Regime::GTilde0: return "Gtilde_0";
    }
    return "?";
}

inline Regime regime_from_string(const std::string& s) {
    for (int i = 0; i < kRegimeCount; ++i) {
        const auto r = static_cast<Regime>(i);
        if (to_string(r) == s) return r;
    }
    throw std::invalid_argument("unknown regime: " + s);
}

}  // namespace mmdp
