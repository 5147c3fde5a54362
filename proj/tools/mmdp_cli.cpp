// mmdp: simulate mediated MDPs, compute ground-truth effects, estimate them
// from data and run seeded experiments.

#include "mmdp/mmdp.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace mmdp;

namespace {

// Relative output paths land under $MMDP_OUTPUT_DIR when it is set.
std::string output_path(const std::string& p) {
    if (p.empty() || p == "-") return p;
    const char* dir = std::getenv("MMDP_OUTPUT_DIR");
    fs::path path(p);
    if (dir != nullptr && *dir != '\0' && path.is_relative()) path = fs::path(dir) / path;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    return path.string();
}

void print_json(const nlohmann::json& j, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    const std::string path = output_path(out);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << '\n';
    std::cerr << "wrote " << path << '\n';
}

struct EnvFlags {
    std::string env = "toy";
    double sigma = 2.0;

    void add(CLI::App* app) {
        app->add_option("--env", env, "toy, toy-iid, semi or multidim")->capture_default_str();
        app->add_option("--sigma", sigma, "noise scale of the semi-synthetic environment")->capture_default_str();
    }
    Environment build() const { return build_environment({environment_kind_from_string(env), sigma}); }
};

const Policy& pick_policy(const Environment& env, const std::string& name) {
    if (name == "behavior") return env.behavior;
    if (name == "target") return env.target;
    if (name == "control") return env.control;
    throw std::invalid_argument("policy must be behavior, target or control");
}

void print_report(const std::vector<MetricsRow>& rows) {
    std::printf("%-9s %-4s %5s %5s %-20s %5s %10s %10s %10s %9s %9s %8s\n", "estimator", "eff", "N", "T", "scenario",
                "seeds", "truth", "mean", "bias", "logmse", "se", "cover");
    for (const auto& r : rows) {
        std::printf("%-9s %-4s %5d %5d %-20s %5d %10.4f %10.4f %10.4f %9.3f %9.4f ", r.estimator.c_str(),
                    r.effect.c_str(), r.n, r.horizon, r.scenario.c_str(), r.n_seeds, r.truth, r.mean, r.bias,
                    r.logmse, r.se);
        if (r.coverage)
            std::printf("%8.3f", *r.coverage);
        else
            std::printf("%8s", "-");
        if (!r.note.empty()) std::printf("  (%s)", r.note.c_str());
        std::printf("\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mediation-effect evaluation for mediated Markov decision processes"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "sample trajectories to CSV plus a JSON descriptor");
    EnvFlags sim_env;
    sim_env.add(sim);
    int sim_n = 100, sim_t = 50;
    std::uint64_t sim_seed = 1;
    std::string sim_policy = "behavior", sim_out = "trajectories.csv";
    sim->add_option("--n", sim_n, "number of trajectories")->capture_default_str();
    sim->add_option("--horizon", sim_t, "steps per trajectory")->capture_default_str();
    sim->add_option("--seed", sim_seed)->capture_default_str();
    sim->add_option("--policy", sim_policy, "behavior, target or control")->capture_default_str();
    sim->add_option("--out", sim_out, "CSV path; the descriptor goes next to it as .json")->capture_default_str();

    // oracle
    auto* orc = app.add_subcommand("oracle", "ground-truth effects");
    EnvFlags orc_env;
    orc_env.add(orc);
    bool orc_exact = false, orc_mc = false;
    int orc_ntraj = 2000, orc_t = 1000;
    std::uint64_t orc_seed = 1;
    std::string orc_out;
    auto* fe = orc->add_flag("--exact", orc_exact, "linear-algebra solve (finite environments)");
    orc->add_flag("--mc", orc_mc, "Monte Carlo over interventional trajectories")->excludes(fe);
    orc->add_option("--n-traj", orc_ntraj)->capture_default_str();
    orc->add_option("--horizon", orc_t)->capture_default_str();
    orc->add_option("--seed", orc_seed)->capture_default_str();
    orc->add_option("--out", orc_out, "JSON path (default stdout)");

    // estimate
    auto* est = app.add_subcommand("estimate", "estimate the effect components from one dataset");
    EnvFlags est_env;
    est_env.add(est);
    std::string est_kind = "mr", est_nuis = "fitted", est_data, est_out;
    int est_n = 200, est_t = 50, est_folds = 2;
    std::uint64_t est_seed = 1;
    double est_level = 0.95;
    bool est_optimal = false;
    est->add_option("--estimator", est_kind, "dm, mis1, mis2, mr, mr-alt, base-dm, base-ipw, base-mr")
        ->capture_default_str();
    est->add_option("--nuisance", est_nuis, "fitted, oracle or corrupt:<all-correct|m1|m2|m3|all-wrong>")
        ->capture_default_str();
    est->add_option("--n", est_n)->capture_default_str();
    est->add_option("--horizon", est_t)->capture_default_str();
    est->add_option("--seed", est_seed)->capture_default_str();
    est->add_option("--data", est_data, "trajectory CSV to use instead of simulating");
    est->add_option("--ci-level", est_level)->capture_default_str();
    std::uint64_t est_cseed = CorruptionConfig{}.seed;
    est->add_option("--corruption-seed", est_cseed, "noise seed for corrupt:<scenario>")->capture_default_str();
    est->add_flag("--optimal-policy", est_optimal,
                  "evaluate a greedy policy fitted by cross-fitting against the control policy");
    est->add_option("--folds", est_folds, "cross-fitting folds for --optimal-policy")->capture_default_str();
    est->add_option("--out", est_out, "JSON path (default stdout)");

    // experiment
    auto* exp = app.add_subcommand("experiment", "run a seeded experiment grid from a JSON config");
    std::string exp_config, exp_out, exp_format;
    int exp_seeds = 0;
    exp->add_option("--config", exp_config, "experiment JSON")->required()->check(CLI::ExistingFile);
    exp->add_option("--out", exp_out, "override the config's output path");
    exp->add_option("--format", exp_format, "csv or json (overrides the config)");
    exp->add_option("--n-seeds", exp_seeds, "override the config's seed count");

    // report
    auto* rep = app.add_subcommand("report", "print a metrics file as a table");
    std::string rep_in;
    rep->add_option("input", rep_in, "metrics CSV or JSON")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) {
            const Environment env = sim_env.build();
            const auto trajs = sample_dataset(env.spec, pick_policy(env, sim_policy), sim_n, sim_t, sim_seed);
            const std::string path = output_path(sim_out);
            save_trajectories_csv(path, trajs, shape_of(env.spec));
            DatasetDescriptor d = describe(env, sim_n, sim_t, sim_seed);
            d.policy = sim_policy;
            const std::string meta = fs::path(path).replace_extension(".json").string();
            std::ofstream(meta) << to_json(d).dump(2) << '\n';
            std::cerr << "wrote " << path << " and " << meta << '\n';
        } else if (*orc) {
            const Environment env = orc_env.build();
            const bool exact = orc_exact || (!orc_mc && env.spec.is_finite());
            const auto t0 = std::chrono::steady_clock::now();
            OracleValues o = exact ? exact_tabular_oracle(env.spec, env.target, env.control, env.behavior)
                                   : mc_oracle(env.spec, env.target, env.control, orc_ntraj, orc_t, orc_seed);
            nlohmann::json j = to_json(o);
            j["env"] = to_string(env.id.kind);
            j["sigma"] = env.id.sigma;
            j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (exact) {
                double worst = 0.0;
                for (int i = 0; i < kRegimeCount; ++i)
                    worst = std::max(worst, oracle_q_check(o, env.spec, static_cast<Regime>(i)));
                j["bellman_residual"] = worst;
            }
            print_json(j, orc_out);
        } else if (*est) {
            const Environment env = est_env.build();
            const DataShape shape = shape_of(env.spec);
            std::vector<Trajectory> trajs;
            int horizon = est_t;
            if (!est_data.empty()) {
                trajs = load_trajectories_csv(est_data);
                horizon = static_cast<int>(trajs.empty() ? 0 : trajs.front().size());
            } else {
                trajs = sample_dataset(env.spec, env.behavior, est_n, est_t, est_seed);
            }
            nlohmann::json j;
            if (est_optimal) {
                const CrossfitResult cf = crossfit_policy_value(trajs, shape, env.control, est_folds);
                j = to_json(cf.estimate, est_level);
                j["policy"] = "greedy (cross-fitted)";
                j["folds"] = est_folds;
            } else {
                const EstimatorKind kind = estimator_from_string(est_kind);
                const NuisanceSource src = nuisance_source_from_string(est_nuis);
                CorruptionConfig ccfg;
                ccfg.seed = est_cseed;
                const TupleData data = make_tuple_data(trajs);
                const NuisanceSet ns =
                    make_nuisances(src, env, data, horizon, NuisanceConfig{}, ccfg, kind == EstimatorKind::MRAlt);
                const EffectEstimate e = estimate_effects(data, ns, env.target, env.control, kind);
                j = to_json(e, est_level);
                j["nuisance"] = to_string(src);
            }
            j["env"] = to_string(env.id.kind);
            j["n"] = static_cast<int>(trajs.size());
            j["horizon"] = horizon;
            print_json(j, est_out);
        } else if (*exp) {
            ExperimentConfig cfg = load_config(exp_config);
            if (!exp_out.empty()) cfg.output = exp_out;
            if (!exp_format.empty()) cfg.format = exp_format;
            if (exp_seeds > 0) cfg.n_seeds = exp_seeds;
            if (cfg.output.empty()) cfg.output = cfg.name + "." + cfg.format;
            const auto rows = run_experiment(cfg);
            const std::string path = output_path(cfg.output);
            emit(rows, metrics_format_from_string(cfg.format), path);
            std::cerr << "wrote " << rows.size() << " rows to " << path << '\n';
        } else if (*rep) {
            print_report(load_metrics(rep_in));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
