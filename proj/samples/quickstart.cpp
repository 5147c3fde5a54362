// Simulate the binary toy MMDP, fit every nuisance from the data and compare
// the multiply robust effect estimates with the exact decomposition.

#include "mmdp/mmdp.hpp"

#include <cstdio>

using namespace mmdp;

int main() {
    const Environment env = build_environment({EnvironmentKind::ToyBinary, 2.0});
    const OracleValues truth = exact_tabular_oracle(env.spec, env.target, env.control, env.behavior);

    const auto trajs = sample_dataset(env.spec, env.behavior, 200, 50, 2024);
    const TupleData data = make_tuple_data(trajs);
    const NuisanceSet ns = fit_nuisances(data, shape_of(env.spec), env.target, env.control);

    const EffectEstimate mr = estimate_effects(data, ns, env.target, env.control, EstimatorKind::MR);
    const EffectEstimate dm = estimate_effects(data, ns, env.target, env.control, EstimatorKind::DM);
    const auto ci = wald_ci(mr);

    std::printf("%-4s %9s %9s %9s %21s\n", "", "truth", "dm", "mr", "mr 95% CI");
    const auto t = truth.effects.as_array(), d = dm.effects.as_array(), m = mr.effects.as_array();
    for (std::size_t j = 0; j < 5; ++j)
        std::printf("%-4s %9.4f %9.4f %9.4f   [%8.4f, %8.4f]\n", kEffectNames[j], t[j], d[j], m[j], ci[j].lo, ci[j].hi);
    return 0;
}
