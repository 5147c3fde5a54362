#pragma once

#include "mmdp/policy.hpp"
#include "mmdp/regime.hpp"
#include "mmdp/spec.hpp"
#include "mmdp/types.hpp"

#include <Eigen/LU>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdp {

/// Finite-space kernels laid out as flat tables. Cell (s, a, m) has index
/// (s*K + a)*n_m + m.
struct TabularKernels {
    int n_s = 0;
    int n_a = 0;
    int n_m = 0;
    std::vector<Point> states;
    std::vector<Point> mediators;
    Vector initial;                 // nu(s)
    std::vector<double> mediator;   // p_m(m|s,a)
    std::vector<double> reward;     // r(s,a,m)
    std::vector<double> next;       // p(s'|s,a,m), index cell*n_s + s'

    int cells() const { return n_s * n_a * n_m; }
    int cell(int s, int a, int m) const { return (s * n_a + a) * n_m + m; }
    double pm(int s, int a, int m) const { return mediator[static_cast<std::size_t>(cell(s, a, m))]; }
    double r(int s, int a, int m) const { return reward[static_cast<std::size_t>(cell(s, a, m))]; }
    double ps(int s, int a, int m, int s2) const {
        return next[static_cast<std::size_t>(cell(s, a, m)) * static_cast<std::size_t>(n_s) +
                    static_cast<std::size_t>(s2)];
    }
};

inline TabularKernels tabulate(const MmdpSpec& spec) {
    if (!spec.is_finite()) throw std::invalid_argument(spec.name + ": tabulation needs finite spaces");
    TabularKernels k;
    k.states = spec.state_support();
    k.mediators = spec.mediator_support();
    k.n_s = static_cast<int>(k.states.size());
    k.n_a = spec.action_count;
    k.n_m = static_cast<int>(k.mediators.size());
    k.initial = Eigen::Map<const Vector>(spec.initial_mass.data(), static_cast<Eigen::Index>(spec.initial_mass.size()));
    const auto nc = static_cast<std::size_t>(k.cells());
    k.mediator.resize(nc);
    k.reward.resize(nc);
    k.next.resize(nc * static_cast<std::size_t>(k.n_s));
    for (int s = 0; s < k.n_s; ++s)
        for (int a = 0; a < k.n_a; ++a)
            for (int m = 0; m < k.n_m; ++m) {
                const auto c = static_cast<std::size_t>(k.cell(s, a, m));
                k.mediator[c] = spec.mediator_density(k.mediators[static_cast<std::size_t>(m)],
                                                      k.states[static_cast<std::size_t>(s)], a);
                k.reward[c] = spec.reward_mean(k.states[static_cast<std::size_t>(s)], a,
                                               k.mediators[static_cast<std::size_t>(m)]);
                for (int s2 = 0; s2 < k.n_s; ++s2)
                    k.next[c * static_cast<std::size_t>(k.n_s) + static_cast<std::size_t>(s2)] =
                        spec.next_state_mass(k.states[static_cast<std::size_t>(s2)],
                                             k.states[static_cast<std::size_t>(s)], a,
                                             k.mediators[static_cast<std::size_t>(m)]);
            }
    return k;
}

/// n_s x K table of action probabilities.
inline Matrix policy_table(const Policy& pi, const std::vector<Point>& states) {
    Matrix t(static_cast<Eigen::Index>(states.size()), pi.action_count());
    for (std::size_t i = 0; i < states.size(); ++i) t.row(static_cast<Eigen::Index>(i)) = pi.probs(states[i]).transpose();
    return t;
}

/// Target and control policy tables, with the behavior table for behavior_law().
struct PolicyTables {
    Matrix target;
    Matrix control;
    Matrix behavior;

    const Matrix& of(PolicyRole role) const {
        switch (role) {
            case PolicyRole::Target: return target;
            case PolicyRole::Control: return control;
            case PolicyRole::Behavior: return behavior;
        }
        throw std::invalid_argument("unknown policy role");
    }
};

/// Exact solution of one regime: state law, average pseudo-reward and the
/// relative value function on (s, a, m) cells.
struct RegimeSolution {
    Vector state_dist;
    double eta = 0.0;
    Vector q;
};

namespace tabular {

/// law(m|s,a) for the regime's historical mediator draw.
inline double mediator_law(const TabularKernels& k, const PolicyTables& pt, const RegimeLaw& law, int s, int a, int m) {
    if (law.mediator == MediatorLaw::FromAction) return k.pm(s, a, m);
    const Matrix& mix = pt.of(law.mediator_policy);
    double p = 0.0;
    for (int b = 0; b < k.n_a; ++b) p += mix(s, b) * k.pm(s, b, m);
    return p;
}

/// Expected one-step pseudo-reward of a cell.
inline double pseudo_reward(const TabularKernels& k, const PolicyTables& pt, const RegimeLaw& law, int s, int a, int m) {
    switch (law.reward) {
        case RewardKind::Observed: return k.r(s, a, m);
        case RewardKind::KeepMediator: {
            const Matrix& pi = pt.of(law.reward_policy);
            double v = 0.0;
            for (int b = 0; b < k.n_a; ++b) v += pi(s, b) * k.r(s, b, m);
            return v;
        }
        case RewardKind::ResampleBoth: {
            const Matrix& pi = pt.of(law.reward_policy);
            double v = 0.0;
            for (int b = 0; b < k.n_a; ++b)
                for (int j = 0; j < k.n_m; ++j) v += pi(s, b) * k.pm(s, b, j) * k.r(s, b, j);
            return v;
        }
    }
    throw std::invalid_argument("unknown reward kind");
}

inline Vector pseudo_rewards(const TabularKernels& k, const PolicyTables& pt, const RegimeLaw& law) {
    Vector pr(k.cells());
    for (int s = 0; s < k.n_s; ++s)
        for (int a = 0; a < k.n_a; ++a)
            for (int m = 0; m < k.n_m; ++m) pr(k.cell(s, a, m)) = pseudo_reward(k, pt, law, s, a, m);
    return pr;
}

/// Cell-to-cell transition matrix under the regime's dynamics.
inline Matrix cell_chain(const TabularKernels& k, const PolicyTables& pt, const RegimeLaw& law) {
    const Matrix& act = pt.of(law.action);
    // weight of (a', m') at s'
    Matrix entry(k.n_s, k.n_a * k.n_m);
    for (int s = 0; s < k.n_s; ++s)
        for (int a = 0; a < k.n_a; ++a)
            for (int m = 0; m < k.n_m; ++m) entry(s, a * k.n_m + m) = act(s, a) * mediator_law(k, pt, law, s, a, m);
    Matrix P = Matrix::Zero(k.cells(), k.cells());
    for (int c = 0; c < k.cells(); ++c) {
        const int s = c / (k.n_a * k.n_m);
        const int rest = c % (k.n_a * k.n_m);
        const int a = rest / k.n_m;
        const int m = rest % k.n_m;
        for (int s2 = 0; s2 < k.n_s; ++s2) {
            const double p = k.ps(s, a, m, s2);
            if (p == 0.0) continue;
            P.block(c, s2 * k.n_a * k.n_m, 1, k.n_a * k.n_m) += p * entry.row(s2);
        }
    }
    return P;
}

/// State-to-state chain under the regime's dynamics.
inline Matrix state_chain(const TabularKernels& k, const PolicyTables& pt, const RegimeLaw& law) {
    const Matrix& act = pt.of(law.action);
    Matrix P = Matrix::Zero(k.n_s, k.n_s);
    for (int s = 0; s < k.n_s; ++s)
        for (int a = 0; a < k.n_a; ++a)
            for (int m = 0; m < k.n_m; ++m) {
                const double w = act(s, a) * mediator_law(k, pt, law, s, a, m);
                for (int s2 = 0; s2 < k.n_s; ++s2) P(s, s2) += w * k.ps(s, a, m, s2);
            }
    return P;
}

/// Solve mu P = mu, sum(mu) = 1.
inline Vector stationary(const Matrix& P) {
    const Eigen::Index n = P.rows();
    Matrix A = P.transpose() - Matrix::Identity(n, n);
    A.row(n - 1).setOnes();
    Vector b = Vector::Zero(n);
    b(n - 1) = 1.0;
    Eigen::FullPivLU<Matrix> lu(A);
    if (!lu.isInvertible()) throw std::runtime_error("non-ergodic chain: stationary law is not unique");
    return lu.solve(b);
}

}  // namespace tabular

/// Exact regime solve: stationary law, eta, and Q from the fundamental matrix.
inline RegimeSolution solve_regime(const TabularKernels& k, const PolicyTables& pt, const RegimeLaw& law) {
    RegimeSolution out;
    const Matrix Ps = tabular::state_chain(k, pt, law);
    out.state_dist = tabular::stationary(Ps);
    const Vector pr = tabular::pseudo_rewards(k, pt, law);

    const Matrix& act = pt.of(law.action);
    Vector mu_cell(k.cells());
    for (int s = 0; s < k.n_s; ++s)
        for (int a = 0; a < k.n_a; ++a)
            for (int m = 0; m < k.n_m; ++m)
                mu_cell(k.cell(s, a, m)) = out.state_dist(s) * act(s, a) * tabular::mediator_law(k, pt, law, s, a, m);
    out.eta = mu_cell.dot(pr);

    const Matrix P = tabular::cell_chain(k, pt, law);
    const Eigen::Index n = P.rows();
    Matrix A = Matrix::Identity(n, n) - P + Vector::Ones(n) * mu_cell.transpose();
    Eigen::FullPivLU<Matrix> lu(A);
    if (!lu.isInvertible()) throw std::runtime_error("non-ergodic chain: fundamental matrix is singular");
    out.q = lu.solve(pr - out.eta * Vector::Ones(n));
    return out;
}

inline RegimeSolution solve_regime(const TabularKernels& k, const PolicyTables& pt, Regime r) {
    return solve_regime(k, pt, regime_law(r));
}

/// max over cells of |eta + Q(c) - pseudo_reward(c) - E[Q(next cell)]|.
inline double bellman_residual(const TabularKernels& k, const PolicyTables& pt, const RegimeLaw& law, const Vector& q,
                               double eta) {
    const Matrix P = tabular::cell_chain(k, pt, law);
    const Vector pr = tabular::pseudo_rewards(k, pt, law);
    return (eta * Vector::Ones(q.size()) + q - pr - P * q).cwiseAbs().maxCoeff();
}

/// (1/T) sum_{t<T} nu P^t for the behavior chain: the average state law of
/// behavior data collected from nu without burn-in.
inline Vector horizon_average_state_law(const TabularKernels& k, const PolicyTables& pt, int horizon) {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    const Matrix P = tabular::state_chain(k, pt, behavior_law());
    Eigen::RowVectorXd p = k.initial.transpose();
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(k.n_s);
    for (int t = 0; t < horizon; ++t) {
        acc += p;
        p = p * P;
    }
    return (acc / static_cast<double>(horizon)).transpose();
}

/// Index of a finite point within k.states / k.mediators (binary encoding).
inline int finite_index(const Point& x) { return static_cast<int>(binary_index(x)); }

}  // namespace mmdp
