#pragma once

#include "mmdp/environments.hpp"
#include "mmdp/models.hpp"
#include "mmdp/oracle.hpp"
#include "mmdp/tabular.hpp"

#include <stdexcept>

namespace mmdp {

/// Exact nuisance tables of a finite environment, expressed as a NuisanceSet
/// on saturated features.
///
/// The ratio denominators are the horizon-averaged behavior state law
/// (1/T) sum_t nu P_b^t rather than its stationary limit: data of length T
/// started from nu have exactly that state law, so weights built this way
/// keep the importance-weighted means unbiased at finite T.
inline NuisanceSet oracle_nuisances(const Environment& env, int horizon, bool alternative = true) {
    const MmdpSpec& spec = env.spec;
    if (!spec.is_finite()) throw std::invalid_argument("oracle_nuisances: needs a finite environment");
    const TabularKernels k = tabulate(spec);
    const OracleValues o = exact_tabular_oracle(spec, env.target, env.control, env.behavior);
    const Vector denom = horizon > 0 ? horizon_average_state_law(k, o.policies, horizon) : o.behavior_dist;

    NuisanceSet ns;
    ns.provenance = Provenance::Oracle;
    ns.behavior = env.behavior;
    ns.mediator = MediatorModel::tabular(spec.mediator_dim, k.n_a, k.mediator);

    // One-hot over (s, m): column s*n_m + m.
    const auto phi = std::make_shared<OneHotFeatures>(spec.state_dim + spec.mediator_dim);
    auto table_model = [&](auto&& value) {
        LinearModel lm{phi, Matrix::Zero(k.n_s * k.n_m, k.n_a)};
        for (int s = 0; s < k.n_s; ++s)
            for (int a = 0; a < k.n_a; ++a)
                for (int m = 0; m < k.n_m; ++m) lm.coef(s * k.n_m + m, a) = value(s, a, m);
        return lm;
    };
    ns.reward = table_model([&](int s, int a, int m) { return k.r(s, a, m); });

    const auto xi = std::make_shared<OneHotFeatures>(spec.state_dim);
    for (Regime r : kRatioTargets) {
        if (!alternative && r == Regime::GTildeE) continue;
        RatioModel rm;
        rm.target = r;
        rm.xi = xi;
        const Vector& num = o.state_dist[static_cast<std::size_t>(regime_index(r))];
        rm.beta = Vector::Zero(num.size());
        // states the behavior data never reach carry no weight
        for (Eigen::Index j = 0; j < num.size(); ++j)
            if (denom(j) > 0.0) rm.beta(j) = num(j) / denom(j);
        ns.ratios[static_cast<std::size_t>(regime_index(r))] = rm;
    }
    for (int i = 0; i < kRegimeCount; ++i) {
        const auto r = static_cast<Regime>(i);
        const bool alt = std::find(kAlternativeRegimes.begin(), kAlternativeRegimes.end(), r) != kAlternativeRegimes.end();
        if (alt && !alternative) continue;
        QModel q;
        q.regime = r;
        q.eta = o.eta[static_cast<std::size_t>(i)];
        const Vector& tab = o.q[static_cast<std::size_t>(i)];
        q.q = table_model([&](int s, int a, int m) { return tab(k.cell(s, a, m)); });
        ns.q[static_cast<std::size_t>(i)] = q;
    }
    return ns;
}

}  // namespace mmdp
