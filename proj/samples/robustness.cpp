// Corrupt the exact nuisances of the toy MMDP in each scenario and watch which
// effects the multiply robust estimator still recovers.

#include "mmdp/mmdp.hpp"

#include <cstdio>

using namespace mmdp;

int main(int argc, char** argv) {
    const int seeds = argc > 1 ? std::atoi(argv[1]) : 50;
    ExperimentConfig cfg;
    cfg.env = {EnvironmentKind::ToyBinary, 2.0};
    cfg.grid = {{200, 50}};
    cfg.estimators = {EstimatorKind::MR};
    cfg.nuisances.clear();
    for (CorruptionScenario s : kAllScenarios) cfg.nuisances.push_back({NuisanceMode::Corrupt, s});
    cfg.n_seeds = seeds;

    std::printf("%-20s %-4s %9s %9s %7s\n", "scenario", "eff", "bias", "se", "|z|");
    for (const auto& r : run_experiment(cfg))
        if (r.effect != std::string("ATE"))
            std::printf("%-20s %-4s %9.4f %9.4f %7.2f\n", r.scenario.c_str(), r.effect.c_str(), r.bias, r.se,
                        std::abs(r.bias) / r.se);
    return 0;
}
