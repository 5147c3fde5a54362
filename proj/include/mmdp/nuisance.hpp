#pragma once

#include "mmdp/features.hpp"
#include "mmdp/models.hpp"
#include "mmdp/policy.hpp"
#include "mmdp/regime.hpp"
#include "mmdp/spec.hpp"
#include "mmdp/types.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdp {

/// Hyperparameters shared by all nuisance fits.
struct NuisanceConfig {
    int ratio_dim = 64;                 // d_omega for continuous states (RFF incl. intercept)
    int sieve_dim = 0;                  // L for continuous (s, m); 0 = ceil((NT)^{1/4}) * 3
    int mediator_basis = 6;             // spline functions per state coordinate in the mediator mean
    std::vector<double> lambda_grid{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    int cv_folds = 5;
    int mc_draws = 100;
    double clip_lo = 0.01;
    double clip_hi = 0.99;
    double ratio_floor = 1e-3;
    double ratio_ridge = 1e-6;
    double reward_ridge = 1e-8;
    std::uint64_t feature_seed = 0x5EEDF00DULL;
    std::uint64_t mc_seed = 0xC0FFEEULL;
};

/// Space layout of a dataset.
struct DataShape {
    int state_dim = 1;
    SpaceKind state_kind = SpaceKind::FiniteBinary;
    int action_count = 2;
    int mediator_dim = 1;
    SpaceKind mediator_kind = SpaceKind::FiniteBinary;

    bool finite() const { return state_kind == SpaceKind::FiniteBinary && mediator_kind == SpaceKind::FiniteBinary; }
};

inline DataShape shape_of(const MmdpSpec& spec) {
    return {spec.state_dim, spec.state_kind, spec.action_count, spec.mediator_dim, spec.mediator_kind};
}

/// Pooled tuples with the index of the trajectory each came from.
struct TupleData {
    std::vector<TransitionTuple> tuples;
    std::vector<int> group;
    int n_groups = 0;

    std::size_t size() const { return tuples.size(); }
};

inline TupleData make_tuple_data(const std::vector<Trajectory>& trajectories) {
    TupleData d;
    d.tuples = pool_tuples(trajectories);
    d.group.reserve(d.tuples.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        d.group.insert(d.group.end(), trajectories[i].size(), static_cast<int>(i));
    d.n_groups = static_cast<int>(trajectories.size());
    return d;
}

inline TupleData make_tuple_data(std::vector<TransitionTuple> tuples) {
    TupleData d;
    d.group.assign(tuples.size(), 0);
    d.tuples = std::move(tuples);
    d.n_groups = 1;
    return d;
}

// ---------------------------------------------------------------------------
// Feature constructors

inline FeatureMapPtr make_state_features(const DataShape& shape, const std::vector<TransitionTuple>& data,
                                         const NuisanceConfig& cfg) {
    if (shape.state_kind == SpaceKind::FiniteBinary) return std::make_shared<OneHotFeatures>(shape.state_dim);
    std::vector<Point> sample;
    sample.reserve(std::min<std::size_t>(data.size(), 500));
    const std::size_t stride = std::max<std::size_t>(1, data.size() / 500);
    for (std::size_t i = 0; i < data.size(); i += stride) sample.push_back(data[i].s);
    const double bw = RandomFourierFeatures::median_bandwidth(sample);
    return std::make_shared<RandomFourierFeatures>(shape.state_dim, cfg.ratio_dim, bw, cfg.feature_seed);
}

inline int default_sieve_dim(std::size_t n) {
    return static_cast<int>(std::ceil(std::pow(static_cast<double>(n), 0.25))) * 3;
}

/// Features of (s, m): one-hot cells when both are finite, additive splines otherwise.
inline FeatureMapPtr make_joint_features(const DataShape& shape, const std::vector<TransitionTuple>& data,
                                         const NuisanceConfig& cfg) {
    if (shape.finite()) return std::make_shared<OneHotFeatures>(shape.state_dim + shape.mediator_dim);
    if (data.empty()) throw std::invalid_argument("make_joint_features: empty data");
    std::vector<Point> sample;
    sample.reserve(data.size());
    for (const auto& o : data) sample.push_back(join_points(o.s, o.m));
    const int total = cfg.sieve_dim > 0 ? cfg.sieve_dim : default_sieve_dim(data.size());
    const int in_dim = shape.state_dim + shape.mediator_dim;
    return std::make_shared<SplineFeatures>(sample, SplineFeatures::per_coordinate_for(total, in_dim));
}

// ---------------------------------------------------------------------------
// Conditional models

namespace detail {

inline void require_nonempty(const std::vector<TransitionTuple>& data, const char* what) {
    if (data.empty()) throw std::invalid_argument(std::string(what) + ": empty data");
}

/// Logistic regression by Newton-Raphson with a tiny ridge.
inline Vector logistic_irls(const Matrix& X, const Vector& y, double ridge = 1e-8, int max_iter = 100) {
    const Eigen::Index p = X.cols();
    Vector beta = Vector::Zero(p);
    for (int it = 0; it < max_iter; ++it) {
        const Vector eta = X * beta;
        Vector mu(eta.size()), w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            mu(i) = expit(eta(i));
            w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
        }
        const Vector grad = X.transpose() * (y - mu) - ridge * beta;
        Matrix H = X.transpose() * w.asDiagonal() * X;
        H.diagonal().array() += ridge;
        const Vector step = H.ldlt().solve(grad);
        beta += step;
        if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return beta;
}

inline double clip(double p, double lo, double hi) { return std::min(std::max(p, lo), hi); }

/// Least squares with ridge on the mean-scaled normal equations.
inline Vector ridge_solve(const Matrix& X, const Vector& y, double ridge) {
    const double n = static_cast<double>(std::max<Eigen::Index>(1, X.rows()));
    Matrix G = X.transpose() * X / n;
    G.diagonal().array() += ridge;
    return G.ldlt().solve(X.transpose() * y / n);
}

}  // namespace detail

/// Pr(A|S): saturated (per-state frequency) on finite states, linear logistic
/// on continuous states. Binary probabilities are clipped to [clip_lo, clip_hi].
inline Policy fit_behavior_policy(const std::vector<TransitionTuple>& data, const DataShape& shape,
                                  const NuisanceConfig& cfg = {}) {
    detail::require_nonempty(data, "fit_behavior_policy");
    const int K = shape.action_count;
    std::vector<int> seen(static_cast<std::size_t>(K), 0);
    for (const auto& o : data) {
        if (o.a < 0 || o.a >= K) throw std::invalid_argument("fit_behavior_policy: action out of range");
        seen[static_cast<std::size_t>(o.a)] = 1;
    }
    if (std::count(seen.begin(), seen.end(), 1) < 2)
        throw std::invalid_argument("fit_behavior_policy: fewer than two distinct actions observed");

    auto clip_probs = [cfg, K](ActionProbs p) {
        if (K == 2) {
            const double p1 = detail::clip(p(1), cfg.clip_lo, cfg.clip_hi);
            p << 1.0 - p1, p1;
            return p;
        }
        for (int a = 0; a < K; ++a) p(a) = std::max(p(a), cfg.clip_lo);
        return ActionProbs(p / p.sum());
    };

    if (shape.state_kind == SpaceKind::FiniteBinary) {
        const int n_s = 1 << shape.state_dim;
        Matrix counts = Matrix::Zero(n_s, K);
        Vector pooled = Vector::Zero(K);
        for (const auto& o : data) {
            counts(binary_index(o.s), o.a) += 1.0;
            pooled(o.a) += 1.0;
        }
        std::vector<ActionProbs> table(static_cast<std::size_t>(n_s));
        for (int s = 0; s < n_s; ++s) {
            const double tot = counts.row(s).sum();
            const Vector row = tot > 0 ? Vector(counts.row(s).transpose() / tot) : Vector(pooled / pooled.sum());
            table[static_cast<std::size_t>(s)] = clip_probs(ActionProbs(row));
        }
        return Policy("behavior-fitted", K, [table](const Point& s) { return table[static_cast<std::size_t>(binary_index(s))]; });
    }

    if (K != 2) throw std::invalid_argument("fit_behavior_policy: continuous states need binary actions");
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    Matrix X(n, 1 + shape.state_dim);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X.row(i).tail(shape.state_dim) = data[static_cast<std::size_t>(i)].s.transpose();
        y(i) = data[static_cast<std::size_t>(i)].a;
    }
    const Vector beta = detail::logistic_irls(X, y);
    LogisticForm form{beta(0), std::vector<double>(beta.data() + 1, beta.data() + beta.size())};
    return Policy("behavior-fitted", 2, [form, clip_probs](const Point& s) {
        double z = form.intercept;
        for (std::size_t j = 0; j < form.weights.size(); ++j) z += form.weights[j] * s(static_cast<Eigen::Index>(j));
        ActionProbs p(2);
        p << 1.0 - expit(z), expit(z);
        return clip_probs(p);
    }, form);
}

/// p_m(m|s,a): saturated cell frequencies (finite; binary masses clipped) or
/// independent Gaussians with per-action spline means in s (continuous).
inline MediatorModel fit_mediator_model(const std::vector<TransitionTuple>& data, const DataShape& shape,
                                        const NuisanceConfig& cfg = {}) {
    detail::require_nonempty(data, "fit_mediator_model");
    const int K = shape.action_count;
    if (shape.mediator_kind == SpaceKind::FiniteBinary) {
        if (shape.state_kind != SpaceKind::FiniteBinary)
            throw std::invalid_argument("fit_mediator_model: finite mediators need finite states");
        const int n_s = 1 << shape.state_dim;
        const int n_m = 1 << shape.mediator_dim;
        std::vector<double> counts(static_cast<std::size_t>(n_s * K * n_m), 0.0);
        std::vector<double> pooled(static_cast<std::size_t>(K * n_m), 0.0);
        for (const auto& o : data) {
            counts[static_cast<std::size_t>((binary_index(o.s) * K + o.a) * n_m + binary_index(o.m))] += 1.0;
            pooled[static_cast<std::size_t>(o.a * n_m + binary_index(o.m))] += 1.0;
        }
        std::vector<double> table(counts.size());
        for (int s = 0; s < n_s; ++s)
            for (int a = 0; a < K; ++a) {
                const std::size_t base = static_cast<std::size_t>((s * K + a) * n_m);
                double tot = 0.0;
                for (int m = 0; m < n_m; ++m) tot += counts[base + static_cast<std::size_t>(m)];
                double ptot = 0.0;
                for (int m = 0; m < n_m; ++m) ptot += pooled[static_cast<std::size_t>(a * n_m + m)];
                double z = 0.0;
                for (int m = 0; m < n_m; ++m) {
                    double p = tot > 0 ? counts[base + static_cast<std::size_t>(m)] / tot
                               : ptot > 0 ? pooled[static_cast<std::size_t>(a * n_m + m)] / ptot
                                          : 1.0 / n_m;
                    p = detail::clip(p, cfg.clip_lo, cfg.clip_hi);
                    table[base + static_cast<std::size_t>(m)] = p;
                    z += p;
                }
                for (int m = 0; m < n_m; ++m) table[base + static_cast<std::size_t>(m)] /= z;
            }
        return MediatorModel::tabular(shape.mediator_dim, K, std::move(table));
    }

    std::vector<Point> states;
    states.reserve(data.size());
    for (const auto& o : data) states.push_back(o.s);
    FeatureMapPtr g;
    if (shape.state_kind == SpaceKind::FiniteBinary) g = std::make_shared<OneHotFeatures>(shape.state_dim);
    else g = std::make_shared<SplineFeatures>(states, cfg.mediator_basis);
    const int dm = shape.mediator_dim;
    const int L = g->dim();
    std::vector<Matrix> coef(static_cast<std::size_t>(dm), Matrix::Zero(L, K));
    Vector ss = Vector::Zero(dm);
    for (int a = 0; a < K; ++a) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data[i].a == a) idx.push_back(i);
        if (idx.empty()) continue;
        Matrix X(static_cast<Eigen::Index>(idx.size()), L);
        for (std::size_t r = 0; r < idx.size(); ++r) X.row(static_cast<Eigen::Index>(r)) = (*g)(data[idx[r]].s).transpose();
        for (int j = 0; j < dm; ++j) {
            Vector y(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t r = 0; r < idx.size(); ++r) y(static_cast<Eigen::Index>(r)) = data[idx[r]].m(j);
            const Vector b = detail::ridge_solve(X, y, 1e-8);
            coef[static_cast<std::size_t>(j)].col(a) = b;
            ss(j) += (y - X * b).squaredNorm();
        }
    }
    Vector sd = (ss / static_cast<double>(data.size())).cwiseSqrt();
    for (int j = 0; j < dm; ++j) sd(j) = std::max(sd(j), 1e-6);
    return MediatorModel::gaussian(g, std::move(coef), std::move(sd), cfg.mc_draws, cfg.mc_seed);
}

/// r(s,a,m) by per-action ridge regression of R on phi(s, m).
inline LinearModel fit_reward_model(const std::vector<TransitionTuple>& data, const DataShape& shape,
                                    FeatureMapPtr phi, const NuisanceConfig& cfg = {}) {
    detail::require_nonempty(data, "fit_reward_model");
    const int K = shape.action_count;
    LinearModel out{phi, Matrix::Zero(phi->dim(), K)};
    for (int a = 0; a < K; ++a) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data[i].a == a) idx.push_back(i);
        if (idx.empty()) continue;
        Matrix X(static_cast<Eigen::Index>(idx.size()), phi->dim());
        Vector y(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            X.row(static_cast<Eigen::Index>(r)) = (*phi)(join_points(data[idx[r]].s, data[idx[r]].m)).transpose();
            y(static_cast<Eigen::Index>(r)) = data[idx[r]].r;
        }
        out.coef.col(a) = detail::ridge_solve(X, y, cfg.reward_ridge);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-tuple feature caches

/// phi(S, M), E_{m ~ p_m(.|S,a)} phi(S, m) and E_{m ~ p_m(.|S',a)} phi(S', m)
/// for every tuple and action, under one mediator model.
struct FeatureCache {
    FeatureMapPtr phi;
    Matrix at_m;                    // n x L
    std::vector<Matrix> expected;   // K of n x L, at S
    std::vector<Matrix> next;       // K of n x L, at S'
};

namespace detail {

inline Vector expected_features(const FeatureMap& phi, const MediatorModel& pm, const Point& s, int a) {
    Vector acc = Vector::Zero(phi.dim());
    Vector buf(phi.dim());
    for (const auto& node : pm.nodes(s, a)) {
        phi.eval(join_points(s, node.m), buf.data());
        acc += node.weight * buf;
    }
    return acc;
}

}  // namespace detail

inline FeatureCache build_feature_cache(const std::vector<TransitionTuple>& data, FeatureMapPtr phi,
                                        const MediatorModel& pm, int action_count) {
    FeatureCache c;
    c.phi = phi;
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    const int L = phi->dim();
    c.at_m.resize(n, L);
    c.expected.assign(static_cast<std::size_t>(action_count), Matrix(n, L));
    c.next.assign(static_cast<std::size_t>(action_count), Matrix(n, L));
    // Tuples repeat states on finite spaces; memoise on the exact state value there.
    const bool memo = pm.finite();
    std::map<std::pair<int, int>, Vector> seen;
    auto expect = [&](const Point& s, int a) -> Vector {
        if (!memo) return detail::expected_features(*phi, pm, s, a);
        const auto key = std::make_pair(binary_index(s), a);
        auto it = seen.find(key);
        if (it == seen.end()) it = seen.emplace(key, detail::expected_features(*phi, pm, s, a)).first;
        return it->second;
    };
    if (memo) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& o = data[static_cast<std::size_t>(i)];
            c.at_m.row(i) = (*phi)(join_points(o.s, o.m)).transpose();
            for (int a = 0; a < action_count; ++a) {
                c.expected[static_cast<std::size_t>(a)].row(i) = expect(o.s, a).transpose();
                c.next[static_cast<std::size_t>(a)].row(i) = expect(o.s_next, a).transpose();
            }
        }
        return c;
    }
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = data[static_cast<std::size_t>(i)];
        c.at_m.row(i) = (*phi)(join_points(o.s, o.m)).transpose();
        for (int a = 0; a < action_count; ++a) {
            c.expected[static_cast<std::size_t>(a)].row(i) = detail::expected_features(*phi, pm, o.s, a).transpose();
            c.next[static_cast<std::size_t>(a)].row(i) = detail::expected_features(*phi, pm, o.s_next, a).transpose();
        }
    }
    return c;
}

/// r(S,a,M) and E_m r(S,a,m) for every tuple and action.
struct RewardCache {
    Matrix at_m;      // n x K
    Matrix expected;  // n x K
};

inline RewardCache build_reward_cache(const FeatureCache& fc, const LinearModel& reward) {
    if (fc.phi != reward.phi) throw std::invalid_argument("build_reward_cache: feature map mismatch");
    RewardCache rc;
    rc.at_m = fc.at_m * reward.coef;
    const int K = reward.action_count();
    rc.expected.resize(fc.at_m.rows(), K);
    for (int a = 0; a < K; ++a) rc.expected.col(a) = fc.expected[static_cast<std::size_t>(a)] * reward.coef.col(a);
    return rc;
}

/// Action-probability tables of a policy at S and S' for every tuple.
struct PolicyCache {
    Matrix at_s;     // n x K
    Matrix at_next;  // n x K
};

inline PolicyCache build_policy_cache(const std::vector<TransitionTuple>& data, const Policy& pi) {
    PolicyCache pc;
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    pc.at_s.resize(n, pi.action_count());
    pc.at_next.resize(n, pi.action_count());
    for (Eigen::Index i = 0; i < n; ++i) {
        pc.at_s.row(i) = pi.probs(data[static_cast<std::size_t>(i)].s).transpose();
        pc.at_next.row(i) = pi.probs(data[static_cast<std::size_t>(i)].s_next).transpose();
    }
    return pc;
}

struct RoleCaches {
    const PolicyCache* target = nullptr;
    const PolicyCache* control = nullptr;
    const PolicyCache* behavior = nullptr;

    const PolicyCache& of(PolicyRole r) const {
        const PolicyCache* p = r == PolicyRole::Target ? target : r == PolicyRole::Control ? control : behavior;
        if (p == nullptr) throw std::invalid_argument("RoleCaches: policy for role not provided");
        return *p;
    }
};

/// Per-tuple expected pseudo-reward of a regime from the fitted reward model.
inline Vector regime_response(const std::vector<TransitionTuple>& data, const RegimeLaw& law, const RewardCache& rc,
                              const RoleCaches& roles) {
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    Vector y(n);
    switch (law.reward) {
        case RewardKind::Observed:
            for (Eigen::Index i = 0; i < n; ++i) y(i) = data[static_cast<std::size_t>(i)].r;
            return y;
        case RewardKind::KeepMediator:
            return rc.at_m.cwiseProduct(roles.of(law.reward_policy).at_s).rowwise().sum();
        case RewardKind::ResampleBoth:
            return rc.expected.cwiseProduct(roles.of(law.reward_policy).at_s).rowwise().sum();
    }
    throw std::invalid_argument("unknown reward kind");
}

/// E over the regime's next-step (a', m') of phi(S', m') placed in action
/// blocks: row i is V_i without the trailing eta coordinate.
inline Matrix regime_next_features(const FeatureCache& fc, const RegimeLaw& law, const RoleCaches& roles) {
    const int K = static_cast<int>(fc.next.size());
    const Eigen::Index n = fc.at_m.rows();
    const Eigen::Index L = fc.at_m.cols();
    const Matrix& act = roles.of(law.action).at_next;
    Matrix V(n, L * K);
    if (law.mediator == MediatorLaw::FromAction) {
        for (int a = 0; a < K; ++a) V.middleCols(a * L, L) = act.col(a).asDiagonal() * fc.next[static_cast<std::size_t>(a)];
        return V;
    }
    const Matrix& mix = roles.of(law.mediator_policy).at_next;
    Matrix E = Matrix::Zero(n, L);
    for (int b = 0; b < K; ++b) E += mix.col(b).asDiagonal() * fc.next[static_cast<std::size_t>(b)];
    for (int a = 0; a < K; ++a) V.middleCols(a * L, L) = act.col(a).asDiagonal() * E;
    return V;
}

// ---------------------------------------------------------------------------
// Density ratio

/// Per-tuple weight in the ratio moment: (target action/mediator law) over
/// (behavior law) at the observed (A, M).
inline Vector ratio_weights(const std::vector<TransitionTuple>& data, Regime target, const Policy& behavior,
                            const MediatorModel& pm, const Policy& pi_e, const Policy& pi_0) {
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    Vector w(n);
    const RegimeLaw law = regime_law(ratio_regime(target));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = data[static_cast<std::size_t>(i)];
        const Policy& act = law.action == PolicyRole::Target ? pi_e : pi_0;
        double v = act.prob(o.s, o.a) / behavior.prob(o.s, o.a);
        if (law.mediator == MediatorLaw::Mixture && v != 0.0)
            v *= mediator_ratio(pm, law.mediator_policy == PolicyRole::Target ? pi_e : pi_0, o);
        w(i) = v;
    }
    return w;
}

/// Solve sum_i [xi(S_i) - w_i xi(S'_i)] xi(S_i)^T beta = 0 with mean(xi^T beta) = 1.
inline RatioModel fit_ratio_weighted(const std::vector<TransitionTuple>& data, Regime target, FeatureMapPtr xi,
                                     const Vector& w, const NuisanceConfig& cfg = {}) {
    detail::require_nonempty(data, "fit_ratio");
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    const int d = xi->dim();
    if (d > n) throw std::invalid_argument("fit_ratio: feature dimension exceeds sample count");
    Matrix X(n, d), Xn(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        X.row(i) = (*xi)(data[static_cast<std::size_t>(i)].s).transpose();
        Xn.row(i) = (*xi)(data[static_cast<std::size_t>(i)].s_next).transpose();
    }
    const Matrix D = X - w.asDiagonal() * Xn;
    const Matrix M = D.transpose() * X / static_cast<double>(n);
    const Vector xbar = X.colwise().mean().transpose();

    RatioModel out;
    out.target = ratio_regime(target);
    out.xi = xi;
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector sv = svd.singularValues();
    const double top = sv(0) > 0 ? sv(0) : 1.0;
    const bool unique_null = d < 2 || sv(d - 2) > 1e-10 * top;
    Vector beta;
    double c = 0.0;
    if (unique_null) {
        beta = svd.matrixV().col(d - 1);
        c = xbar.dot(beta);
    }
    if (unique_null && std::abs(c) > 1e-12) {
        beta /= c;
        // The d-1 dimensional system with the null direction replaced by the constraint.
        const Matrix Mp = M - sv(d - 1) * svd.matrixU().col(d - 1) * svd.matrixV().col(d - 1).transpose();
        out.moment_residual = (Mp * beta).cwiseAbs().maxCoeff();
    } else {
        Matrix G = M.transpose() * M;
        G.diagonal().array() += cfg.ratio_ridge;
        const Vector g = G.ldlt().solve(xbar);
        beta = g / xbar.dot(g);
        out.moment_residual = (G * beta - xbar / xbar.dot(g)).cwiseAbs().maxCoeff();
        std::ostringstream msg;
        msg << "ratio system for " << to_string(target) << " is rank deficient; ridge " << cfg.ratio_ridge << " applied";
        out.warning = msg.str();
    }
    out.beta = beta;
    out.floor = cfg.ratio_floor;
    const Vector raw = X * beta;
    out.norm = raw.cwiseMax(cfg.ratio_floor).mean();
    return out;
}

inline RatioModel fit_ratio(const std::vector<TransitionTuple>& data, Regime target, const Policy& behavior,
                            const MediatorModel& pm, const Policy& pi_e, const Policy& pi_0, FeatureMapPtr xi,
                            const NuisanceConfig& cfg = {}) {
    return fit_ratio_weighted(data, target, xi, ratio_weights(data, target, behavior, pm, pi_e, pi_0), cfg);
}

// ---------------------------------------------------------------------------
// Relative value function and eta

struct SieveSystem {
    Matrix U;  // n x P
    Matrix V;  // n x P
    Vector y;  // n
};

inline SieveSystem build_sieve_system(const std::vector<TransitionTuple>& data, const FeatureCache& fc,
                                      const RegimeLaw& law, const Vector& response, const RoleCaches& roles) {
    const int K = static_cast<int>(fc.next.size());
    const Eigen::Index n = fc.at_m.rows();
    const Eigen::Index L = fc.at_m.cols();
    const Eigen::Index P = L * K + 1;
    SieveSystem s;
    s.U = Matrix::Zero(n, P);
    for (Eigen::Index i = 0; i < n; ++i) s.U.row(i).segment(data[static_cast<std::size_t>(i)].a * L, L) = fc.at_m.row(i);
    s.U.col(P - 1).setOnes();
    s.V = Matrix::Zero(n, P);
    s.V.leftCols(L * K) = regime_next_features(fc, law, roles);
    s.y = response;
    return s;
}

namespace detail {

inline Matrix ridge_penalty(Eigen::Index P) {
    Matrix D = Matrix::Identity(P, P);
    D(P - 1, P - 1) = 0.0;
    return D;
}

inline Vector solve_sieve(const Matrix& A, const Vector& b, double lambda) {
    const Eigen::Index P = A.rows();
    const Matrix G = A + lambda * ridge_penalty(P);
    Eigen::FullPivLU<Matrix> lu(G);
    if (!lu.isInvertible()) {
        Eigen::JacobiSVD<Matrix> svd(G);
        const auto sv = svd.singularValues();
        std::ostringstream msg;
        msg << "sieve system singular after ridge " << lambda << " (condition number "
            << (sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity()) << ")";
        throw std::runtime_error(msg.str());
    }
    return lu.solve(b);
}

}  // namespace detail

/// Choose the ridge level by K-fold cross-validation (folds by trajectory)
/// on the held-out mean squared projected Bellman error.
inline double select_lambda(const SieveSystem& sys, const std::vector<int>& group, int n_groups,
                            const NuisanceConfig& cfg) {
    if (cfg.lambda_grid.empty()) throw std::invalid_argument("select_lambda: empty grid");
    if (cfg.lambda_grid.size() == 1) return cfg.lambda_grid.front();
    const Eigen::Index n = sys.U.rows();
    const Eigen::Index P = sys.U.cols();
    int folds = std::max(2, std::min(cfg.cv_folds, n_groups));
    std::vector<int> fold(static_cast<std::size_t>(n));
    if (n_groups >= folds) {
        for (Eigen::Index i = 0; i < n; ++i) fold[static_cast<std::size_t>(i)] = group[static_cast<std::size_t>(i)] % folds;
    } else {
        folds = std::min<int>(cfg.cv_folds, static_cast<int>(n));
        for (Eigen::Index i = 0; i < n; ++i) fold[static_cast<std::size_t>(i)] = static_cast<int>(i * folds / n);
    }
    std::vector<Matrix> A(static_cast<std::size_t>(folds), Matrix::Zero(P, P)), C = A;
    std::vector<Vector> b(static_cast<std::size_t>(folds), Vector::Zero(P));
    std::vector<double> cnt(static_cast<std::size_t>(folds), 0.0);
    for (int k = 0; k < folds; ++k) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < n; ++i)
            if (fold[static_cast<std::size_t>(i)] == k) idx.push_back(i);
        Matrix Uk(static_cast<Eigen::Index>(idx.size()), P), Vk(static_cast<Eigen::Index>(idx.size()), P);
        Vector yk(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            Uk.row(static_cast<Eigen::Index>(r)) = sys.U.row(idx[r]);
            Vk.row(static_cast<Eigen::Index>(r)) = sys.V.row(idx[r]);
            yk(static_cast<Eigen::Index>(r)) = sys.y(idx[r]);
        }
        A[static_cast<std::size_t>(k)] = Uk.transpose() * (Uk - Vk);
        C[static_cast<std::size_t>(k)] = Uk.transpose() * Uk;
        b[static_cast<std::size_t>(k)] = Uk.transpose() * yk;
        cnt[static_cast<std::size_t>(k)] = static_cast<double>(idx.size());
    }
    Matrix At = Matrix::Zero(P, P);
    Vector bt = Vector::Zero(P);
    for (int k = 0; k < folds; ++k) {
        At += A[static_cast<std::size_t>(k)];
        bt += b[static_cast<std::size_t>(k)];
    }
    double best = std::numeric_limits<double>::infinity();
    double best_lambda = cfg.lambda_grid.front();
    for (double lambda : cfg.lambda_grid) {
        double score = 0.0;
        bool ok = true;
        for (int k = 0; k < folds && ok; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            const double ntr = static_cast<double>(n) - cnt[ks];
            if (cnt[ks] == 0 || ntr <= 0) continue;
            try {
                const Vector beta = detail::solve_sieve((At - A[ks]) / ntr, (bt - b[ks]) / ntr, lambda);
                const Vector g = (b[ks] - A[ks] * beta) / cnt[ks];
                Matrix Ck = C[ks] / cnt[ks];
                Ck.diagonal().array() += 1e-8;
                score += g.dot(Ck.ldlt().solve(g));
            } catch (const std::runtime_error&) {
                ok = false;
            }
        }
        if (ok && score < best) {
            best = score;
            best_lambda = lambda;
        }
    }
    return best_lambda;
}

/// Solve the ridge-regularised sieve estimating equation at a given lambda.
inline QModel solve_q_eta(const SieveSystem& sys, const FeatureCache& fc, Regime regime, double lambda) {
    const Eigen::Index n = sys.U.rows();
    const Eigen::Index P = sys.U.cols();
    const Matrix A = sys.U.transpose() * (sys.U - sys.V) / static_cast<double>(n);
    const Vector b = sys.U.transpose() * sys.y / static_cast<double>(n);
    const Vector beta = detail::solve_sieve(A, b, lambda);
    QModel q;
    q.regime = regime;
    q.lambda = lambda;
    const Eigen::Index L = fc.at_m.cols();
    const int K = static_cast<int>(fc.next.size());
    q.q.phi = fc.phi;
    q.q.coef.resize(L, K);
    for (int a = 0; a < K; ++a) q.q.coef.col(a) = beta.segment(a * L, L);
    q.eta = beta(P - 1);
    q.moment_residual = (b - A * beta - lambda * detail::ridge_penalty(P) * beta).cwiseAbs().maxCoeff();
    return q;
}

/// Fit (Q, eta) for a regime law from cached features; lambda by CV when the
/// grid has several values.
inline QModel fit_q_eta_cached(const TupleData& data, const FeatureCache& fc, const RewardCache& rc,
                               const RegimeLaw& law, Regime tag, const RoleCaches& roles, const NuisanceConfig& cfg) {
    const Eigen::Index P = fc.at_m.cols() * static_cast<Eigen::Index>(fc.next.size()) + 1;
    if (static_cast<Eigen::Index>(data.size()) < P)
        throw std::invalid_argument("fit_q_eta: sieve dimension exceeds sample count");
    const Vector y = regime_response(data.tuples, law, rc, roles);
    const SieveSystem sys = build_sieve_system(data.tuples, fc, law, y, roles);
    const double lambda = select_lambda(sys, data.group, data.n_groups, cfg);
    return solve_q_eta(sys, fc, tag, lambda);
}

/// Convenience form building every cache from the models.
inline QModel fit_q_eta(const TupleData& data, Regime regime, const MediatorModel& pm, const LinearModel& reward,
                        const Policy& pi_e, const Policy& pi_0, const NuisanceConfig& cfg = {}) {
    const int K = reward.action_count();
    const FeatureCache fc = build_feature_cache(data.tuples, reward.phi, pm, K);
    const RewardCache rc = build_reward_cache(fc, reward);
    const PolicyCache ce = build_policy_cache(data.tuples, pi_e);
    const PolicyCache c0 = build_policy_cache(data.tuples, pi_0);
    return fit_q_eta_cached(data, fc, rc, regime_law(regime), regime, RoleCaches{&ce, &c0, nullptr}, cfg);
}

// ---------------------------------------------------------------------------
// Full fit

struct FitOptions {
    bool alternative = false;  // also fit the alternative-decomposition regimes
};

/// Fit every nuisance from data. Q and r share one feature map on (s, m).
inline NuisanceSet fit_nuisances(const TupleData& data, const DataShape& shape, const Policy& pi_e,
                                 const Policy& pi_0, const NuisanceConfig& cfg = {}, FitOptions opt = {}) {
    NuisanceSet ns;
    ns.provenance = Provenance::Fitted;
    ns.behavior = fit_behavior_policy(data.tuples, shape, cfg);
    ns.mediator = fit_mediator_model(data.tuples, shape, cfg);
    const FeatureMapPtr phi = make_joint_features(shape, data.tuples, cfg);
    ns.reward = fit_reward_model(data.tuples, shape, phi, cfg);

    const FeatureMapPtr xi = make_state_features(shape, data.tuples, cfg);
    std::vector<Regime> ratio_targets{Regime::PiE, Regime::Pi0, Regime::G0};
    if (opt.alternative) ratio_targets.push_back(Regime::GTildeE);
    for (Regime r : ratio_targets)
        ns.ratios[static_cast<std::size_t>(regime_index(r))] =
            fit_ratio(data.tuples, r, ns.behavior, ns.mediator, pi_e, pi_0, xi, cfg);

    const FeatureCache fc = build_feature_cache(data.tuples, phi, ns.mediator, shape.action_count);
    const RewardCache rc = build_reward_cache(fc, ns.reward);
    const PolicyCache ce = build_policy_cache(data.tuples, pi_e);
    const PolicyCache c0 = build_policy_cache(data.tuples, pi_0);
    const RoleCaches roles{&ce, &c0, nullptr};
    std::vector<Regime> regimes(kPrimaryRegimes.begin(), kPrimaryRegimes.end());
    if (opt.alternative) regimes.insert(regimes.end(), kAlternativeRegimes.begin(), kAlternativeRegimes.end());
    for (Regime r : regimes)
        ns.q[static_cast<std::size_t>(regime_index(r))] = fit_q_eta_cached(data, fc, rc, regime_law(r), r, roles, cfg);
    return ns;
}

}  // namespace mmdp
