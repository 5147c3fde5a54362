#pragma once

#include "mmdp/models.hpp"
#include "mmdp/nuisance.hpp"
#include "mmdp/oracle.hpp"
#include "mmdp/regime.hpp"

#include <boost/math/distributions/normal.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmdp {

enum class EstimatorKind { DM, MIS1, MIS2, MR, MRAlt, BaseDM, BaseIPW, BaseMR };

inline constexpr std::array<EstimatorKind, 8> kAllEstimators{EstimatorKind::DM,     EstimatorKind::MIS1,
                                                            EstimatorKind::MIS2,   EstimatorKind::MR,
                                                            EstimatorKind::MRAlt,  EstimatorKind::BaseDM,
                                                            EstimatorKind::BaseIPW, EstimatorKind::BaseMR};

inline std::string to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::DM: return "dm";
        case EstimatorKind::MIS1: return "mis1";
        case EstimatorKind::MIS2: return "mis2";
        case EstimatorKind::MR: return "mr";
        case EstimatorKind::MRAlt: return "mr-alt";
        case EstimatorKind::BaseDM: return "base-dm";
        case EstimatorKind::BaseIPW: return "base-ipw";
        case EstimatorKind::BaseMR: return "base-mr";
    }
    return "?";
}

inline EstimatorKind estimator_from_string(const std::string& s) {
    for (EstimatorKind k : kAllEstimators)
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown estimator: " + s);
}

inline bool is_baseline(EstimatorKind k) {
    return k == EstimatorKind::BaseDM || k == EstimatorKind::BaseIPW || k == EstimatorKind::BaseMR;
}

/// Per-tuple contributions eta_d + I_d(O) for each regime an MR estimator used.
struct InfluenceRecord {
    Matrix phi;                    // n x kRegimeCount; unused columns are zero
    std::array<bool, kRegimeCount> used{};
};

struct EffectEstimate {
    EstimatorKind kind = EstimatorKind::DM;
    EffectValues effects;
    std::optional<EffectValues> se;  // MR variants only
    EtaArray eta{};                  // NaN where not estimated
    bool baseline_only = false;      // only IDE and IME are meaningful
    std::optional<InfluenceRecord> influence;
};

inline EtaArray nan_etas() {
    EtaArray e;
    e.fill(std::numeric_limits<double>::quiet_NaN());
    return e;
}

/// Everything the estimators evaluate per tuple, computed once: features of
/// (S, M) and their mediator expectations at S and S', fitted rewards, policy
/// tables, mediator ratios.
class EstimationContext {
public:
    EstimationContext(const TupleData& data, const NuisanceSet& ns, const Policy& pi_e, const Policy& pi_0)
        : data_(&data), ns_(&ns), pi_e_(&pi_e), pi_0_(&pi_0) {
        ns.require_basics();
        if (data.size() == 0) throw std::invalid_argument("estimation needs data");
        K_ = ns.reward.action_count();
        n_ = static_cast<Eigen::Index>(data.size());
        const FeatureCache& fc = features(ns.reward.phi);
        rc_ = build_reward_cache(fc, ns.reward);
        ce_ = build_policy_cache(data.tuples, pi_e);
        c0_ = build_policy_cache(data.tuples, pi_0);
        cb_ = build_policy_cache(data.tuples, ns.behavior);
        rho_e_.resize(n_);
        rho_0_.resize(n_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            const auto& o = tuple(i);
            rho_e_(i) = mediator_ratio(ns.mediator, pi_e, o);
            rho_0_(i) = mediator_ratio(ns.mediator, pi_0, o);
        }
    }

    const TupleData& data() const { return *data_; }
    const NuisanceSet& nuisances() const { return *ns_; }
    const TransitionTuple& tuple(Eigen::Index i) const { return data_->tuples[static_cast<std::size_t>(i)]; }
    Eigen::Index size() const { return n_; }
    int actions() const { return K_; }

    const PolicyCache& policy(PolicyRole r) const {
        return r == PolicyRole::Target ? ce_ : r == PolicyRole::Control ? c0_ : cb_;
    }
    const PolicyCache& behavior() const { return cb_; }
    const RewardCache& rewards() const { return rc_; }
    /// rho for the mediator mixture of the given role.
    const Vector& rho(PolicyRole r) const {
        if (r == PolicyRole::Behavior) throw std::invalid_argument("rho: behavior mixture not used");
        return r == PolicyRole::Target ? rho_e_ : rho_0_;
    }

    /// Feature cache for a feature map; built lazily and kept per map.
    const FeatureCache& features(const FeatureMapPtr& phi) const {
        auto it = caches_.find(phi.get());
        if (it == caches_.end())
            it = caches_.emplace(phi.get(), build_feature_cache(data_->tuples, phi, ns_->mediator, K_)).first;
        return it->second;
    }

    /// E_{m ~ p(.|S, b)} r(S, a, m) for every tuple.
    double cross_reward(Eigen::Index i, int b, int a) const {
        return features(ns_->reward.phi).expected[static_cast<std::size_t>(b)].row(i).dot(ns_->reward.coef.col(a));
    }

private:
    const TupleData* data_;
    const NuisanceSet* ns_;
    const Policy* pi_e_;
    const Policy* pi_0_;
    int K_ = 2;
    Eigen::Index n_ = 0;
    mutable std::map<const FeatureMap*, FeatureCache> caches_;
    RewardCache rc_;
    PolicyCache ce_, c0_, cb_;
    Vector rho_e_, rho_0_;
};

namespace detail {

inline EffectValues se_from_columns(const Matrix& cols) {
    // cols: n x 5 per-tuple influence of each effect
    const double n = static_cast<double>(cols.rows());
    std::array<double, 5> out{};
    for (Eigen::Index j = 0; j < 5; ++j) {
        const double mean = cols.col(j).mean();
        const double var = n > 1 ? (cols.col(j).array() - mean).square().sum() / (n - 1.0) : 0.0;
        out[static_cast<std::size_t>(j)] = std::sqrt(var / n);
    }
    return {out[0], out[1], out[2], out[3], out[4]};
}

inline double weight_of(const PolicyCache& pc, const PolicyCache& pb, Eigen::Index i, int a) {
    return pc.at_s(i, a) / pb.at_s(i, a);
}

}  // namespace detail

/// eta of a regime's pseudo-reward by importance weighting alone.
inline Vector mis_terms(const EstimationContext& ctx, Regime d, bool ge_reward_model = false) {
    const NuisanceSet& ns = ctx.nuisances();
    const RegimeLaw law = regime_law(d);
    const RatioModel& w = ns.ratio(d);
    const PolicyRole mpol = law.mediator == MediatorLaw::Mixture ? law.mediator_policy : law.action;
    Vector out(ctx.size());
    for (Eigen::Index i = 0; i < ctx.size(); ++i) {
        const auto& o = ctx.tuple(i);
        const double om = w.value(o.s);
        switch (law.reward) {
            case RewardKind::Observed:
                out(i) = om * detail::weight_of(ctx.policy(law.action), ctx.behavior(), i, o.a) * o.r;
                break;
            case RewardKind::KeepMediator:
                if (ge_reward_model) {
                    double f = 0.0;
                    for (int a = 0; a < ctx.actions(); ++a)
                        f += ctx.policy(law.reward_policy).at_s(i, a) * ctx.rewards().at_m(i, a);
                    double tdw = om * detail::weight_of(ctx.policy(law.action), ctx.behavior(), i, o.a);
                    if (law.mediator == MediatorLaw::Mixture) tdw *= ctx.rho(mpol)(i);
                    out(i) = tdw * f;
                } else {
                    out(i) = om * detail::weight_of(ctx.policy(law.reward_policy), ctx.behavior(), i, o.a) *
                             ctx.rho(mpol)(i) * o.r;
                }
                break;
            case RewardKind::ResampleBoth:
                out(i) = om * detail::weight_of(ctx.policy(law.reward_policy), ctx.behavior(), i, o.a) * o.r;
                break;
        }
    }
    return out;
}

/// Augmentation I_d(O) of one regime's average pseudo-reward.
inline Vector augmentation_terms(const EstimationContext& ctx, Regime d) {
    const NuisanceSet& ns = ctx.nuisances();
    const RegimeLaw law = regime_law(d);
    const RatioModel& w = ns.ratio(d);
    const QModel& q = ns.q_for(d);
    const FeatureCache& fc = ctx.features(q.q.phi);
    const Matrix& B = q.q.coef;  // L x K
    const int K = ctx.actions();
    const PolicyCache& act = ctx.policy(law.action);
    const PolicyCache& pb = ctx.behavior();
    const RewardCache& rc = ctx.rewards();
    const bool mixture = law.mediator == MediatorLaw::Mixture;
    const PolicyRole mpol = mixture ? law.mediator_policy : law.action;

    // Per-tuple Q projections: Q(S,a,M), E_{m|S,b} Q(S,a,m), E_{m|S',b} Q(S',a,m).
    const Matrix q_at = fc.at_m * B;  // n x K
    std::vector<Matrix> q_exp(static_cast<std::size_t>(K)), q_next(static_cast<std::size_t>(K));
    for (int b = 0; b < K; ++b) {
        q_exp[static_cast<std::size_t>(b)] = fc.expected[static_cast<std::size_t>(b)] * B;  // row i, col a
        q_next[static_cast<std::size_t>(b)] = fc.next[static_cast<std::size_t>(b)] * B;
    }

    Vector out(ctx.size());
    for (Eigen::Index i = 0; i < ctx.size(); ++i) {
        const auto& o = ctx.tuple(i);
        const int A = o.a;
        const double om = w.value(o.s);
        double W = act.at_s(i, A) / pb.at_s(i, A);

        // next-step expectation under the regime
        double next = 0.0;
        for (int a = 0; a < K; ++a) {
            const double pa = act.at_next(i, a);
            if (pa == 0.0) continue;
            if (!mixture) {
                next += pa * q_next[static_cast<std::size_t>(a)](i, a);
            } else {
                const PolicyCache& mix = ctx.policy(law.mediator_policy);
                for (int b = 0; b < K; ++b) next += pa * mix.at_next(i, b) * q_next[static_cast<std::size_t>(b)](i, a);
            }
        }
        double current = mixture ? q_at(i, A) : q_exp[static_cast<std::size_t>(A)](i, A);
        if (mixture) W *= ctx.rho(mpol)(i);

        double f = 0.0, corr = 0.0;
        switch (law.reward) {
            case RewardKind::Observed: f = o.r; break;
            case RewardKind::KeepMediator: {
                const PolicyCache& nu = ctx.policy(law.reward_policy);
                for (int a = 0; a < K; ++a) f += nu.at_s(i, a) * rc.at_m(i, a);
                corr = om * nu.at_s(i, A) / pb.at_s(i, A) * ctx.rho(mpol)(i) * (o.r - rc.at_m(i, A));
                break;
            }
            case RewardKind::ResampleBoth: {
                const PolicyCache& nu = ctx.policy(law.reward_policy);
                for (int a = 0; a < K; ++a) f += nu.at_s(i, a) * rc.expected(i, a);
                corr = om * nu.at_s(i, A) / pb.at_s(i, A) * (o.r - rc.expected(i, A));
                break;
            }
        }
        double extra = 0.0;
        if (mixture) {
            // mediator-law correction: sum_a pi_act(a|S) [Q(S,a,M) - E_{m|S,A} Q(S,a,m)]
            const PolicyCache& mix = ctx.policy(law.mediator_policy);
            double diff = 0.0;
            for (int a = 0; a < K; ++a)
                diff += act.at_s(i, a) * (q_at(i, a) - q_exp[static_cast<std::size_t>(A)](i, a));
            extra = om * mix.at_s(i, A) / pb.at_s(i, A) * diff;
        }
        out(i) = om * W * (f + next - current - q.eta) + corr + extra;
    }
    return out;
}

/// Plug-in estimates from the fitted (Q, eta) regimes.
inline EffectEstimate dm_effects(const NuisanceSet& ns) {
    EffectEstimate e;
    e.kind = EstimatorKind::DM;
    e.eta = nan_etas();
    for (Regime r : kPrimaryRegimes) e.eta[static_cast<std::size_t>(regime_index(r))] = ns.q_for(r).eta;
    e.effects = effects_from_etas(e.eta);
    return e;
}

/// Marginalised importance sampling. MIS1 weights GE by the mediator ratio;
/// MIS2 replaces the reward by the fitted r(S, pi_0, M).
inline EffectEstimate mis_effects(const EstimationContext& ctx, EstimatorKind variant = EstimatorKind::MIS1) {
    if (variant != EstimatorKind::MIS1 && variant != EstimatorKind::MIS2)
        throw std::invalid_argument("mis_effects: variant must be mis1 or mis2");
    EffectEstimate e;
    e.kind = variant;
    e.eta = nan_etas();
    for (Regime r : kPrimaryRegimes) {
        const bool model = r == Regime::GE && variant == EstimatorKind::MIS2;
        e.eta[static_cast<std::size_t>(regime_index(r))] = mis_terms(ctx, r, model).mean();
    }
    e.effects = effects_from_etas(e.eta);
    return e;
}

namespace detail {

template <std::size_t N>
EffectEstimate mr_from_regimes(const EstimationContext& ctx, const std::array<Regime, N>& regimes, bool alternative) {
    const NuisanceSet& ns = ctx.nuisances();
    EffectEstimate e;
    e.kind = alternative ? EstimatorKind::MRAlt : EstimatorKind::MR;
    e.eta = nan_etas();
    InfluenceRecord inf;
    inf.phi = Matrix::Zero(ctx.size(), kRegimeCount);
    for (Regime r : regimes) {
        const auto j = static_cast<Eigen::Index>(regime_index(r));
        inf.phi.col(j) = augmentation_terms(ctx, r).array() + ns.q_for(r).eta;
        inf.used[static_cast<std::size_t>(j)] = true;
        e.eta[static_cast<std::size_t>(j)] = inf.phi.col(j).mean();
    }
    auto col = [&](Regime r) { return inf.phi.col(regime_index(r)); };
    Matrix eff(ctx.size(), 5);
    if (!alternative) {
        eff.col(0) = col(Regime::PiE) - col(Regime::GE);
        eff.col(1) = col(Regime::GE) - col(Regime::PiE0);
        eff.col(2) = col(Regime::PiE0) - col(Regime::G0);
        eff.col(3) = col(Regime::G0) - col(Regime::Pi0);
        e.effects = effects_from_etas(e.eta);
    } else {
        eff.col(0) = col(Regime::GTilde0) - col(Regime::Pi0);
        eff.col(1) = col(Regime::Pi0E) - col(Regime::GTilde0);
        eff.col(2) = col(Regime::GTildeE) - col(Regime::Pi0E);
        eff.col(3) = col(Regime::PiE) - col(Regime::GTildeE);
        e.effects = alternative_effects_from_etas(e.eta);
    }
    eff.col(4) = col(Regime::PiE) - col(Regime::Pi0);
    e.se = se_from_columns(eff);
    e.influence = std::move(inf);
    return e;
}

}  // namespace detail

/// Multiply robust estimates: eta_d plus the mean augmentation for each regime.
inline EffectEstimate mr_effects(const EstimationContext& ctx) {
    return detail::mr_from_regimes(ctx, kPrimaryRegimes, false);
}

/// MR estimates of the alternative decomposition (mediator effect first).
inline EffectEstimate mr_effects_alternative(const EstimationContext& ctx) {
    constexpr std::array<Regime, 5> regs{Regime::PiE, Regime::GTildeE, Regime::Pi0E, Regime::GTilde0, Regime::Pi0};
    return detail::mr_from_regimes(ctx, regs, true);
}

/// Single-stage IDE/IME estimators that treat tuples as i.i.d. draws.
inline EffectEstimate baseline_effects(const EstimationContext& ctx, EstimatorKind kind) {
    if (!is_baseline(kind)) throw std::invalid_argument("baseline_effects: not a baseline estimator");
    const int K = ctx.actions();
    const PolicyCache& pe = ctx.policy(PolicyRole::Target);
    const PolicyCache& p0 = ctx.policy(PolicyRole::Control);
    const PolicyCache& pb = ctx.behavior();
    const RewardCache& rc = ctx.rewards();
    const Vector& rho = ctx.rho(PolicyRole::Target);
    double ide = 0.0, ime = 0.0;
    for (Eigen::Index i = 0; i < ctx.size(); ++i) {
        const auto& o = ctx.tuple(i);
        const int A = o.a;
        // X(b, a) = E_{m ~ p(.|S,b)} r(S, a, m)
        auto X = [&](int b, int a) { return ctx.cross_reward(i, b, a); };
        switch (kind) {
            case EstimatorKind::BaseDM: {
                for (int a = 0; a < K; ++a) {
                    double cross = 0.0;
                    for (int b = 0; b < K; ++b) cross += p0.at_s(i, b) * X(a, b);
                    ide += pe.at_s(i, a) * (rc.expected(i, a) - cross);
                    double mix = 0.0;
                    for (int b = 0; b < K; ++b) mix += pe.at_s(i, b) * X(b, a);
                    ime += p0.at_s(i, a) * (mix - X(a, a));
                }
                break;
            }
            case EstimatorKind::BaseIPW:
                ide += (pe.at_s(i, A) - p0.at_s(i, A) * rho(i)) / pb.at_s(i, A) * o.r;
                ime += p0.at_s(i, A) / pb.at_s(i, A) * (rho(i) - 1.0) * o.r;
                break;
            case EstimatorKind::BaseMR: {
                auto eta_pi = [&](const PolicyCache& pc) {
                    double v = pc.at_s(i, A) / pb.at_s(i, A) * (o.r - rc.expected(i, A));
                    for (int a = 0; a < K; ++a) v += pc.at_s(i, a) * rc.expected(i, a);
                    return v;
                };
                double r0m = 0.0, r0e = 0.0, r0A = 0.0;
                for (int a = 0; a < K; ++a) {
                    r0m += p0.at_s(i, a) * rc.at_m(i, a);
                    r0A += p0.at_s(i, a) * X(A, a);
                    for (int b = 0; b < K; ++b) r0e += pe.at_s(i, b) * p0.at_s(i, a) * X(b, a);
                }
                const double ge = p0.at_s(i, A) / pb.at_s(i, A) * rho(i) * (o.r - rc.at_m(i, A)) +
                                  pe.at_s(i, A) / pb.at_s(i, A) * (r0m - r0A) + r0e;
                const double ve = eta_pi(pe), v0 = eta_pi(p0);
                ide += ve - ge;
                ime += ge - v0;
                break;
            }
            default: break;
        }
    }
    const double n = static_cast<double>(ctx.size());
    EffectEstimate e;
    e.kind = kind;
    e.eta = nan_etas();
    e.baseline_only = true;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    e.effects = {ide / n, ime / n, nan, nan, nan};
    return e;
}

/// Dispatch by estimator kind.
inline EffectEstimate estimate_effects(const EstimationContext& ctx, EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::DM: return dm_effects(ctx.nuisances());
        case EstimatorKind::MIS1:
        case EstimatorKind::MIS2: return mis_effects(ctx, kind);
        case EstimatorKind::MR: return mr_effects(ctx);
        case EstimatorKind::MRAlt: return mr_effects_alternative(ctx);
        default: return baseline_effects(ctx, kind);
    }
}

inline EffectEstimate estimate_effects(const TupleData& data, const NuisanceSet& ns, const Policy& pi_e,
                                       const Policy& pi_0, EstimatorKind kind) {
    if (kind == EstimatorKind::DM) return dm_effects(ns);
    const EstimationContext ctx(data, ns, pi_e, pi_0);
    return estimate_effects(ctx, kind);
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool covers(double x) const { return lo <= x && x <= hi; }
};

/// point +/- z_{(1+level)/2} * se for each effect (IDE, IME, DDE, DME, ATE).
inline std::array<Interval, 5> wald_ci(const EffectEstimate& est, double level = 0.95) {
    if (!est.se) throw std::invalid_argument("wald_ci: estimate from " + to_string(est.kind) + " has no standard errors");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("wald_ci: level must be in (0, 1)");
    const double z = boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
    const auto p = est.effects.as_array();
    const auto s = est.se->as_array();
    std::array<Interval, 5> out;
    for (std::size_t j = 0; j < 5; ++j) out[j] = {p[j] - z * s[j], p[j] + z * s[j]};
    return out;
}

}  // namespace mmdp
