#pragma once

#include "mmdp/features.hpp"
#include "mmdp/policy.hpp"
#include "mmdp/regime.hpp"
#include "mmdp/rng.hpp"
#include "mmdp/spec.hpp"
#include "mmdp/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdp {

/// Resolves PolicyRole to concrete policies.
struct PolicyRoles {
    const Policy* target = nullptr;
    const Policy* control = nullptr;
    const Policy* behavior = nullptr;

    const Policy& of(PolicyRole r) const {
        const Policy* p = r == PolicyRole::Target ? target : r == PolicyRole::Control ? control : behavior;
        if (p == nullptr) throw std::invalid_argument("PolicyRoles: policy for role not provided");
        return *p;
    }
};

/// Quadrature node for an expectation over the mediator law.
struct MediatorNode {
    Point m;
    double weight = 0.0;
};

/// Conditional law of the mediator given (s, a): a mass/density evaluator plus
/// quadrature nodes for expectations (the exact support for finite mediators,
/// common-random-number draws otherwise).
class MediatorModel {
public:
    using Density = std::function<double(const Point& m, const Point& s, int a)>;
    using Nodes = std::function<std::vector<MediatorNode>(const Point& s, int a)>;

    MediatorModel() = default;
    MediatorModel(std::string kind, Density density, Nodes nodes, bool finite)
        : kind_(std::move(kind)), density_(std::move(density)), nodes_(std::move(nodes)), finite_(finite) {}

    double density(const Point& m, const Point& s, int a) const { return density_(m, s, a); }
    std::vector<MediatorNode> nodes(const Point& s, int a) const { return nodes_(s, a); }
    bool finite() const { return finite_; }
    const std::string& kind() const { return kind_; }
    explicit operator bool() const { return static_cast<bool>(density_); }

    /// Finite mediator with masses table[(s*K + a)*n_m + m], states and
    /// mediators indexed in binary order.
    static MediatorModel tabular(int mediator_dim, int action_count, std::vector<double> table) {
        const auto support = enumerate_binary(mediator_dim);
        const int n_m = static_cast<int>(support.size());
        auto dens = [table, action_count, n_m](const Point& m, const Point& s, int a) {
            return table[static_cast<std::size_t>((binary_index(s) * action_count + a) * n_m + binary_index(m))];
        };
        auto nodes = [table, action_count, n_m, support](const Point& s, int a) {
            std::vector<MediatorNode> out;
            out.reserve(support.size());
            const int base = (binary_index(s) * action_count + a) * n_m;
            for (int j = 0; j < n_m; ++j)
                out.push_back({support[static_cast<std::size_t>(j)], table[static_cast<std::size_t>(base + j)]});
            return out;
        };
        return MediatorModel("tabular", dens, nodes, true);
    }

    /// Independent Gaussian coordinates with mean_j = g(s) . coef_j,a and sd_j.
    /// Nodes reuse one bank of standard normal draws for every (s, a).
    static MediatorModel gaussian(FeatureMapPtr state_features, std::vector<Matrix> coef, Vector sd, int mc_draws,
                                  std::uint64_t seed) {
        const int dm = static_cast<int>(sd.size());
        Matrix bank(mc_draws, dm);
        Rng rng(seed);
        for (int k = 0; k < mc_draws; ++k)
            for (int j = 0; j < dm; ++j) bank(k, j) = draw_normal(rng);
        auto mean = [state_features, coef, dm](const Point& s, int a) {
            const Vector g = (*state_features)(s);
            Point mu(dm);
            for (int j = 0; j < dm; ++j) mu(j) = g.dot(coef[static_cast<std::size_t>(j)].col(a));
            return mu;
        };
        auto dens = [mean, sd, dm](const Point& m, const Point& s, int a) {
            constexpr double inv_sqrt_2pi = 0.39894228040143267793994605993438;
            const Point mu = mean(s, a);
            double p = 1.0;
            for (int j = 0; j < dm; ++j) {
                const double z = (m(j) - mu(j)) / sd(j);
                p *= inv_sqrt_2pi / sd(j) * std::exp(-0.5 * z * z);
            }
            return p;
        };
        auto nodes = [mean, sd, bank, dm](const Point& s, int a) {
            const Point mu = mean(s, a);
            std::vector<MediatorNode> out(static_cast<std::size_t>(bank.rows()));
            const double w = 1.0 / static_cast<double>(bank.rows());
            for (Eigen::Index k = 0; k < bank.rows(); ++k) {
                Point m(dm);
                for (int j = 0; j < dm; ++j) m(j) = mu(j) + sd(j) * bank(k, j);
                out[static_cast<std::size_t>(k)] = {m, w};
            }
            return out;
        };
        return MediatorModel("gaussian", dens, nodes, false);
    }

    /// The environment's own mediator kernel (correctly specified model).
    static MediatorModel from_spec(const MmdpSpec& spec, int mc_draws, std::uint64_t seed) {
        const bool finite = spec.mediator_kind == SpaceKind::FiniteBinary;
        MediatorModel::Nodes nodes;
        if (finite) {
            const auto support = spec.mediator_support();
            nodes = [spec, support](const Point& s, int a) {
                std::vector<MediatorNode> out;
                for (const auto& m : support) out.push_back({m, spec.mediator_density(m, s, a)});
                return out;
            };
        } else {
            nodes = [spec, mc_draws, seed](const Point& s, int a) {
                Rng rng(seed);  // same stream at every (s, a)
                std::vector<MediatorNode> out(static_cast<std::size_t>(mc_draws));
                for (auto& n : out) n = {spec.sample_mediator(s, a, rng), 1.0 / mc_draws};
                return out;
            };
        }
        return MediatorModel("exact", spec.mediator_density, nodes, finite);
    }

private:
    std::string kind_;
    Density density_;
    Nodes nodes_;
    bool finite_ = true;
};

/// rho(s, a, m) = sum_a' pi(a'|s) p_m(m|s,a') / p_m(m|s,a).
inline double mediator_ratio(const MediatorModel& pm, const Policy& pi, const Point& s, int a, const Point& m) {
    const ActionProbs p = pi.probs(s);
    double num = 0.0;
    for (int b = 0; b < p.size(); ++b)
        if (p(b) != 0.0) num += p(b) * pm.density(m, s, b);
    const double den = pm.density(m, s, a);
    if (!(den > 0.0)) throw std::domain_error("mediator_ratio: zero mediator density");
    return num / den;
}

inline double mediator_ratio(const MediatorModel& pm, const Policy& pi, const TransitionTuple& o) {
    return mediator_ratio(pm, pi, o.s, o.a, o.m);
}

/// Per-action linear model on features of (s, m): value = phi(s, m) . coef.col(a).
/// Serves both the reward mean r(s,a,m) and relative value functions Q(s,a,m).
struct LinearModel {
    FeatureMapPtr phi;
    Matrix coef;  // L x K

    double value(const Point& s, int a, const Point& m) const { return (*phi)(join_points(s, m)).dot(coef.col(a)); }
    int action_count() const { return static_cast<int>(coef.cols()); }
};

/// Relative value function and average pseudo-reward of one regime.
struct QModel {
    Regime regime = Regime::PiE;
    LinearModel q;
    double eta = 0.0;
    double lambda = 0.0;
    double moment_residual = 0.0;  // max |ridge-adjusted estimating equation|

    double value(const Point& s, int a, const Point& m) const { return q.value(s, a, m); }
};

/// Marginal state density ratio omega(s) = max(xi(s).beta, floor) / norm.
struct RatioModel {
    Regime target = Regime::PiE;
    FeatureMapPtr xi;
    Vector beta;
    double norm = 1.0;
    double floor = -std::numeric_limits<double>::infinity();
    double moment_residual = 0.0;
    std::string warning;

    double value(const Point& s) const { return std::max((*xi)(s).dot(beta), floor) / norm; }
};

enum class Provenance { Fitted, Oracle, Corrupted };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::Fitted: return "fitted";
        case Provenance::Oracle: return "oracle";
        case Provenance::Corrupted: return "corrupted";
    }
    return "?";
}

/// Regimes whose stationary ratio is needed: one per distinct dynamics.
inline constexpr std::array<Regime, 4> kRatioTargets{Regime::PiE, Regime::Pi0, Regime::G0, Regime::GTildeE};

/// Dynamics-equivalent regime whose ratio serves this regime.
inline Regime ratio_regime(Regime r) {
    switch (r) {
        case Regime::PiE:
        case Regime::GE:
        case Regime::PiE0: return Regime::PiE;
        case Regime::Pi0:
        case Regime::Pi0E:
        case Regime::GTilde0: return Regime::Pi0;
        case Regime::G0: return Regime::G0;
        case Regime::GTildeE: return Regime::GTildeE;
    }
    throw std::invalid_argument("unknown regime");
}

struct NuisanceSet {
    Policy behavior;
    MediatorModel mediator;
    LinearModel reward;
    std::array<std::optional<RatioModel>, kRegimeCount> ratios;
    std::array<std::optional<QModel>, kRegimeCount> q;
    Provenance provenance = Provenance::Fitted;

    bool has_ratio(Regime r) const { return ratios[static_cast<std::size_t>(regime_index(ratio_regime(r)))].has_value(); }
    bool has_q(Regime r) const { return q[static_cast<std::size_t>(regime_index(r))].has_value(); }

    const RatioModel& ratio(Regime r) const {
        const auto& m = ratios[static_cast<std::size_t>(regime_index(ratio_regime(r)))];
        if (!m) throw std::invalid_argument("nuisance set has no ratio model for " + to_string(r));
        return *m;
    }
    const QModel& q_for(Regime r) const {
        const auto& m = q[static_cast<std::size_t>(regime_index(r))];
        if (!m) throw std::invalid_argument("nuisance set has no Q model for " + to_string(r));
        return *m;
    }
    void require_basics() const {
        if (!behavior) throw std::invalid_argument("nuisance set has no behavior policy");
        if (!mediator) throw std::invalid_argument("nuisance set has no mediator model");
        if (!reward.phi) throw std::invalid_argument("nuisance set has no reward model");
    }
};

}  // namespace mmdp
