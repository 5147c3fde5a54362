#pragma once

#include "mmdp/policy.hpp"
#include "mmdp/rng.hpp"
#include "mmdp/spec.hpp"
#include "mmdp/types.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace mmdp {

enum class EnvironmentKind { ToyBinary, ToyBinaryIidState, SemiSynthetic, MultiDim };

struct EnvironmentId {
    EnvironmentKind kind = EnvironmentKind::ToyBinary;
    /// Noise scale shared by mediators and reward/state in SemiSynthetic.
    double sigma = 2.0;
};

inline std::string to_string(EnvironmentKind k) {
    switch (k) {
        case EnvironmentKind::ToyBinary: return "toy";
        case EnvironmentKind::ToyBinaryIidState: return "toy-iid";
        case EnvironmentKind::SemiSynthetic: return "semi";
        case EnvironmentKind::MultiDim: return "multidim";
    }
    return "?";
}

inline EnvironmentKind environment_kind_from_string(const std::string& s) {
    if (s == "toy") return EnvironmentKind::ToyBinary;
    if (s == "toy-iid") return EnvironmentKind::ToyBinaryIidState;
    if (s == "semi") return EnvironmentKind::SemiSynthetic;
    if (s == "multidim") return EnvironmentKind::MultiDim;
    throw std::invalid_argument("unknown environment: " + s + " (expected toy, toy-iid, semi, multidim)");
}

/// An environment together with its behavior, target and control policies.
struct Environment {
    EnvironmentId id;
    MmdpSpec spec;
    Policy behavior;
    Policy target;
    Policy control;
};

/// Coefficients of a scalar binary-state, binary-mediator MMDP with logistic
/// kernels and a two-point reward {0, reward_high}. Used for both toy settings
/// and for hand-built test environments.
struct BinaryLogisticParams {
    std::string name = "binary-logistic";
    double initial_p1 = 0.5;
    LogisticForm behavior{1.0, {-2.0}};
    LogisticForm target{1.5, {1.0}};
    int control_action = 0;
    // Pr(M=1|s,a) = expit(c0 + cs s + ca a)
    double med_c0 = 1.0, med_cs = -1.5, med_ca = 2.5;
    // Pr(R=high|s,a,m) = expit(c0 + cs s + ca a + cm m)
    double rew_c0 = 1.0, rew_cs = 2.0, rew_ca = -1.0, rew_cm = -2.5;
    double reward_high = 10.0;
    // Pr(S'=1|s,a,m) = expit(c0 + cs s + ca a + cm m), or a constant when set.
    double nxt_c0 = 0.5, nxt_cs = 3.0, nxt_ca = -2.5, nxt_cm = -0.5;
    std::optional<double> next_state_constant;
};

inline Environment make_binary_logistic_environment(const BinaryLogisticParams& p) {
    MmdpSpec spec;
    spec.name = p.name;
    spec.state_dim = 1;
    spec.state_kind = SpaceKind::FiniteBinary;
    spec.action_count = 2;
    spec.mediator_dim = 1;
    spec.mediator_kind = SpaceKind::FiniteBinary;
    spec.initial_mass = {1.0 - p.initial_p1, p.initial_p1};
    spec.reward_support = {0.0, p.reward_high};

    auto med_p1 = [p](const Point& s, int a) { return expit(p.med_c0 + p.med_cs * s(0) + p.med_ca * a); };
    auto rew_p1 = [p](const Point& s, int a, const Point& m) {
        return expit(p.rew_c0 + p.rew_cs * s(0) + p.rew_ca * a + p.rew_cm * m(0));
    };
    auto nxt_p1 = [p](const Point& s, int a, const Point& m) {
        if (p.next_state_constant) return *p.next_state_constant;
        return expit(p.nxt_c0 + p.nxt_cs * s(0) + p.nxt_ca * a + p.nxt_cm * m(0));
    };

    spec.sample_initial = [p1 = p.initial_p1](Rng& rng) { return scalar_point(draw_bernoulli(p1, rng) ? 1.0 : 0.0); };
    spec.sample_mediator = [med_p1](const Point& s, int a, Rng& rng) {
        return scalar_point(draw_bernoulli(med_p1(s, a), rng) ? 1.0 : 0.0);
    };
    spec.mediator_density = [med_p1](const Point& m, const Point& s, int a) {
        const double q = med_p1(s, a);
        return m(0) > 0.5 ? q : 1.0 - q;
    };
    spec.sample_outcome = [rew_p1, nxt_p1, high = p.reward_high](const Point& s, int a, const Point& m, Rng& rng) {
        const double r = draw_bernoulli(rew_p1(s, a, m), rng) ? high : 0.0;
        const Point s2 = scalar_point(draw_bernoulli(nxt_p1(s, a, m), rng) ? 1.0 : 0.0);
        return std::pair<Point, double>{s2, r};
    };
    spec.reward_mean = [rew_p1, high = p.reward_high](const Point& s, int a, const Point& m) {
        return high * rew_p1(s, a, m);
    };
    spec.outcome_mass = [rew_p1, nxt_p1, high = p.reward_high](const Point& s2, double r, const Point& s, int a,
                                                                 const Point& m) {
        const double pr = rew_p1(s, a, m);
        const double ps = nxt_p1(s, a, m);
        double mass_r = 0.0;
        if (r == high) mass_r = pr;
        else if (r == 0.0) mass_r = 1.0 - pr;
        const double mass_s = s2(0) > 0.5 ? ps : 1.0 - ps;
        return mass_r * mass_s;
    };
    Environment env;
    env.spec = std::move(spec);
    env.behavior = Policy::logistic("behavior", p.behavior);
    env.target = Policy::logistic("target", p.target);
    env.control = Policy::deterministic("control", 2, p.control_action);
    return env;
}

namespace detail {

inline double normal_pdf(double x, double mean, double sd) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267793994605993438;
    const double z = (x - mean) / sd;
    return inv_sqrt_2pi / sd * std::exp(-0.5 * z * z);
}

inline double rsqrt_abs(double x) { return std::sqrt(std::abs(x)); }

inline Environment make_semi_synthetic(double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("semi-synthetic sigma must be > 0");
    MmdpSpec spec;
    spec.name = "semi";
    spec.state_dim = 1;
    spec.state_kind = SpaceKind::Continuous;
    spec.action_count = 2;
    spec.mediator_dim = 2;
    spec.mediator_kind = SpaceKind::Continuous;

    auto med_mean = [](const Point& s, int a) {
        const double da = a - 0.5;
        const double rs = rsqrt_abs(s(0));
        return std::pair<double, double>{rs + da, 0.5 * da * rs - 0.5 * s(0)};
    };
    auto rew_mean = [](const Point& s, int a, const Point& m) {
        const double da = a - 0.5;
        return 0.75 * (s(0) + rsqrt_abs(s(0)) + (1.0 + std::sqrt(std::abs(m(0)) + std::abs(m(1)))) * da) +
               1.5 * (m(0) + m(1));
    };

    spec.sample_initial = [](Rng& rng) { return scalar_point(draw_normal(rng)); };
    spec.sample_mediator = [med_mean, sigma](const Point& s, int a, Rng& rng) {
        const auto [mu1, mu2] = med_mean(s, a);
        const double z1 = draw_normal(rng);
        const double z2 = draw_normal(rng);
        return make_point({mu1 + sigma * z1, mu2 + sigma * z2});
    };
    spec.mediator_density = [med_mean, sigma](const Point& m, const Point& s, int a) {
        const auto [mu1, mu2] = med_mean(s, a);
        return normal_pdf(m(0), mu1, sigma) * normal_pdf(m(1), mu2, sigma);
    };
    // R_t = S_{t+1}: one normal draw serves both.
    spec.sample_outcome = [rew_mean, sigma](const Point& s, int a, const Point& m, Rng& rng) {
        const double r = rew_mean(s, a, m) + sigma * draw_normal(rng);
        return std::pair<Point, double>{scalar_point(r), r};
    };
    spec.reward_mean = rew_mean;

    Environment env;
    env.id = {EnvironmentKind::SemiSynthetic, sigma};
    env.spec = std::move(spec);
    env.behavior = Policy::constant("behavior", (ActionProbs(2) << 0.5, 0.5).finished());
    env.target = Policy::logistic("target", LogisticForm{0.0, {0.7}});
    env.control = Policy::deterministic("control", 2, 0);
    return env;
}

inline Environment make_multi_dim() {
    MmdpSpec spec;
    spec.name = "multidim";
    spec.state_dim = 2;
    spec.state_kind = SpaceKind::Continuous;
    spec.action_count = 2;
    spec.mediator_dim = 2;
    spec.mediator_kind = SpaceKind::Continuous;

    auto med_mean = [](const Point& s, int a) {
        const double da = a - 0.5;
        const double rs = rsqrt_abs(s(0)) + rsqrt_abs(s(1));
        return std::pair<double, double>{0.5 * rs + da, -0.25 * (s(0) + s(1)) + 0.25 * da * rs};
    };
    auto gain = [](const Point& m, int a) { return (1.0 + std::sqrt(std::abs(m(0)) + std::abs(m(1)))) * (a - 0.5); };
    auto rew_mean = [gain](const Point& s, int a, const Point& m) {
        return 0.75 * (0.5 * (s(0) + s(1) + rsqrt_abs(s(0)) + rsqrt_abs(s(1))) + gain(m, a)) + 1.5 * (m(0) + m(1));
    };

    spec.sample_initial = [](Rng& rng) {
        const double z1 = draw_normal(rng);
        const double z2 = draw_normal(rng);
        return make_point({z1, z2});
    };
    spec.sample_mediator = [med_mean](const Point& s, int a, Rng& rng) {
        const auto [mu1, mu2] = med_mean(s, a);
        const double z1 = draw_normal(rng);
        const double z2 = draw_normal(rng);
        return make_point({mu1 + z1, mu2 + z2});
    };
    spec.mediator_density = [med_mean](const Point& m, const Point& s, int a) {
        const auto [mu1, mu2] = med_mean(s, a);
        return normal_pdf(m(0), mu1, 1.0) * normal_pdf(m(1), mu2, 1.0);
    };
    spec.sample_outcome = [gain, rew_mean](const Point& s, int a, const Point& m, Rng& rng) {
        const double g = gain(m, a);
        const double msum = 1.5 * (m(0) + m(1));
        const double z1 = draw_normal(rng);
        const double z2 = draw_normal(rng);
        const double zr = draw_normal(rng);
        Point s2 = make_point({0.75 * (s(0) + rsqrt_abs(s(0)) + g) + msum + z1,
                               0.75 * (s(1) + rsqrt_abs(s(1)) + g) + msum + z2});
        return std::pair<Point, double>{s2, rew_mean(s, a, m) + zr};
    };
    spec.reward_mean = rew_mean;

    Environment env;
    env.id = {EnvironmentKind::MultiDim, 1.0};
    env.spec = std::move(spec);
    env.behavior = Policy::constant("behavior", (ActionProbs(2) << 0.5, 0.5).finished());
    env.target = Policy::logistic("target", LogisticForm{0.0, {0.3, 0.3}});
    env.control = Policy::deterministic("control", 2, 0);
    return env;
}

}  // namespace detail

/// Build one of the four reference environments.
///
/// ToyBinaryIidState draws every state, including S0, from Bernoulli(0.2), so
/// all state observations are i.i.d. regardless of the policy.
inline Environment build_environment(const EnvironmentId& id) {
    switch (id.kind) {
        case EnvironmentKind::ToyBinary: {
            BinaryLogisticParams p;
            p.name = "toy";
            Environment env = make_binary_logistic_environment(p);
            env.id = {EnvironmentKind::ToyBinary, id.sigma};
            return env;
        }
        case EnvironmentKind::ToyBinaryIidState: {
            BinaryLogisticParams p;
            p.name = "toy-iid";
            p.initial_p1 = 0.2;
            p.next_state_constant = 0.2;
            Environment env = make_binary_logistic_environment(p);
            env.id = {EnvironmentKind::ToyBinaryIidState, id.sigma};
            return env;
        }
        case EnvironmentKind::SemiSynthetic: return detail::make_semi_synthetic(id.sigma);
        case EnvironmentKind::MultiDim: return detail::make_multi_dim();
    }
    throw std::invalid_argument("unknown environment");
}

}  // namespace mmdp
