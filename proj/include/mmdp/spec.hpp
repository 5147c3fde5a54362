#pragma once

#include "mmdp/rng.hpp"
#include "mmdp/types.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmdp {

/// Generative specification of a mediated MDP.
///
/// Samplers are always present. Mass evaluators for the initial law and the
/// outcome kernel are only required when both state and mediator spaces are
/// finite; the exact oracle relies on them.
struct MmdpSpec {
    using InitialSampler = std::function<Point(Rng&)>;
    using MediatorSampler = std::function<Point(const Point& s, int a, Rng&)>;
    using MediatorDensity = std::function<double(const Point& m, const Point& s, int a)>;
    using OutcomeSampler = std::function<std::pair<Point, double>(const Point& s, int a, const Point& m, Rng&)>;
    using RewardMean = std::function<double(const Point& s, int a, const Point& m)>;
    using OutcomeMass =
        std::function<double(const Point& s_next, double r, const Point& s, int a, const Point& m)>;

    std::string name;
    int state_dim = 1;
    SpaceKind state_kind = SpaceKind::FiniteBinary;
    int action_count = 2;
    int mediator_dim = 1;
    SpaceKind mediator_kind = SpaceKind::FiniteBinary;

    InitialSampler sample_initial;
    /// Finite states only, indexed in enumerate_binary(state_dim) order.
    std::vector<double> initial_mass;

    MediatorSampler sample_mediator;
    /// Mass (finite) or density (continuous) of m given (s, a).
    MediatorDensity mediator_density;

    OutcomeSampler sample_outcome;
    /// r(s, a, m) = E[R | s, a, m]; available for every environment built here.
    RewardMean reward_mean;

    /// Finite only: joint mass of (s', r) and the finite reward support.
    OutcomeMass outcome_mass;
    std::vector<double> reward_support;

    bool is_finite() const {
        return state_kind == SpaceKind::FiniteBinary && mediator_kind == SpaceKind::FiniteBinary;
    }

    std::vector<Point> state_support() const {
        require_finite_states();
        return enumerate_binary(state_dim);
    }

    std::vector<Point> mediator_support() const {
        if (mediator_kind != SpaceKind::FiniteBinary)
            throw std::logic_error(name + ": mediator space is continuous");
        return enumerate_binary(mediator_dim);
    }

    /// Pr(S' = s_next | s, a, m), marginalising the reward.
    double next_state_mass(const Point& s_next, const Point& s, int a, const Point& m) const {
        double total = 0.0;
        for (double r : reward_support) total += outcome_mass(s_next, r, s, a, m);
        return total;
    }

    /// Throws when the finite mass functions do not sum to one within tol.
    void validate(double tol = 1e-12) const {
        if (action_count < 1 || action_count > kMaxActions)
            throw std::invalid_argument(name + ": action count out of range");
        if (state_dim < 1 || state_dim > kMaxPointDim || mediator_dim < 1 || mediator_dim > kMaxPointDim)
            throw std::invalid_argument(name + ": dimension out of range");
        if (!sample_initial || !sample_mediator || !mediator_density || !sample_outcome || !reward_mean)
            throw std::invalid_argument(name + ": missing sampler or evaluator");
        if (!is_finite()) return;
        const auto states = state_support();
        const auto meds = mediator_support();
        if (initial_mass.size() != states.size())
            throw std::invalid_argument(name + ": initial mass has wrong size");
        double init = 0.0;
        for (double p : initial_mass) init += p;
        if (std::abs(init - 1.0) > tol) throw std::invalid_argument(name + ": initial law does not sum to 1");
        for (const auto& s : states) {
            for (int a = 0; a < action_count; ++a) {
                double pm = 0.0;
                for (const auto& m : meds) pm += mediator_density(m, s, a);
                if (std::abs(pm - 1.0) > tol)
                    throw std::invalid_argument(name + ": mediator kernel does not sum to 1");
                for (const auto& m : meds) {
                    double po = 0.0;
                    for (const auto& s2 : states)
                        for (double r : reward_support) po += outcome_mass(s2, r, s, a, m);
                    if (std::abs(po - 1.0) > tol)
                        throw std::invalid_argument(name + ": outcome kernel does not sum to 1");
                }
            }
        }
    }

private:
    void require_finite_states() const {
        if (state_kind != SpaceKind::FiniteBinary)
            throw std::logic_error(name + ": state space is continuous");
    }
};

}  // namespace mmdp
