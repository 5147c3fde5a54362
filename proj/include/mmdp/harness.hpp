#pragma once

#include "mmdp/environments.hpp"
#include "mmdp/estimators.hpp"
#include "mmdp/io.hpp"
#include "mmdp/nuisance.hpp"
#include "mmdp/oracle.hpp"
#include "mmdp/oracle_nuisance.hpp"
#include "mmdp/scenarios.hpp"
#include "mmdp/simulate.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdp {

// ---------------------------------------------------------------------------
// Nuisance source

enum class NuisanceMode { Fitted, Oracle, Corrupt };

struct NuisanceSource {
    NuisanceMode mode = NuisanceMode::Fitted;
    CorruptionScenario scenario = CorruptionScenario::AllCorrect;
};

inline std::string to_string(const NuisanceSource& n) {
    switch (n.mode) {
        case NuisanceMode::Fitted: return "fitted";
        case NuisanceMode::Oracle: return "oracle";
        case NuisanceMode::Corrupt: return "corrupt:" + to_string(n.scenario);
    }
    return "?";
}

inline NuisanceSource nuisance_source_from_string(const std::string& s) {
    if (s == "fitted") return {NuisanceMode::Fitted, CorruptionScenario::AllCorrect};
    if (s == "oracle") return {NuisanceMode::Oracle, CorruptionScenario::AllCorrect};
    if (s.rfind("corrupt:", 0) == 0) return {NuisanceMode::Corrupt, scenario_from_string(s.substr(8))};
    throw std::invalid_argument("unknown nuisance source: " + s + " (expected fitted, oracle, corrupt:<scenario>)");
}

/// Nuisances for one dataset. Oracle tables use ratios matched to the
/// dataset's horizon.
inline NuisanceSet make_nuisances(const NuisanceSource& src, const Environment& env, const TupleData& data,
                                  int horizon, const NuisanceConfig& ncfg, const CorruptionConfig& ccfg,
                                  bool alternative) {
    switch (src.mode) {
        case NuisanceMode::Fitted:
            return fit_nuisances(data, shape_of(env.spec), env.target, env.control, ncfg, FitOptions{alternative});
        case NuisanceMode::Oracle: return oracle_nuisances(env, horizon, alternative);
        case NuisanceMode::Corrupt:
            return corrupt_nuisances(oracle_nuisances(env, horizon, alternative), src.scenario, shape_of(env.spec),
                                     ccfg);
    }
    throw std::logic_error("make_nuisances: bad mode");
}

// ---------------------------------------------------------------------------
// Config

enum class LogMse { LogOfMean, MeanOfLog };

struct GridCell {
    int n = 0;
    int horizon = 0;
};

struct OracleSource {
    std::string kind = "auto";  // auto: exact when finite, else mc
    int n_traj = 2000;
    int horizon = 1000;
    std::uint64_t seed = 1;
    // Precomputed truth, e.g. a cached MC run.
    std::optional<EffectValues> effects;
    std::optional<EffectValues> alternative;
};

struct ExperimentConfig {
    std::string name = "experiment";
    EnvironmentId env;
    std::vector<GridCell> grid;
    std::vector<EstimatorKind> estimators;
    std::vector<NuisanceSource> nuisances{NuisanceSource{}};
    int n_seeds = 1;
    std::uint64_t seed = 1;
    std::string output;  // empty: no file
    std::string format = "csv";
    NuisanceConfig nuisance;
    CorruptionConfig corruption;
    LogMse logmse = LogMse::LogOfMean;
    double ci_level = 0.95;
    OracleSource oracle;

    void validate() const {
        if (n_seeds < 1) throw std::invalid_argument("config: n_seeds must be >= 1");
        if (grid.empty()) throw std::invalid_argument("config: grid is empty");
        for (const auto& c : grid)
            if (c.n < 1 || c.horizon < 1) throw std::invalid_argument("config: grid cells need n, horizon >= 1");
        if (estimators.empty()) throw std::invalid_argument("config: no estimators");
        if (nuisances.empty()) throw std::invalid_argument("config: no nuisance source");
        if (format != "csv" && format != "json") throw std::invalid_argument("config: format must be csv or json");
        if (!(ci_level > 0.0 && ci_level < 1.0)) throw std::invalid_argument("config: ci_level must be in (0, 1)");
    }
};

namespace detail {

inline nlohmann::json effects_json(const EffectValues& e) {
    return {{"ide", e.ide}, {"ime", e.ime}, {"dde", e.dde}, {"dme", e.dme}, {"ate", e.ate}};
}

inline EffectValues effects_from_json(const nlohmann::json& j) {
    EffectValues e;
    e.ide = j.at("ide").get<double>();
    e.ime = j.at("ime").get<double>();
    e.dde = j.at("dde").get<double>();
    e.dme = j.at("dme").get<double>();
    e.ate = j.contains("ate") ? j.at("ate").get<double>() : e.ide + e.ime + e.dde + e.dme;
    return e;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["name"] = c.name;
    j["env"] = to_string(c.env.kind);
    j["sigma"] = c.env.sigma;
    for (const auto& g : c.grid) j["grid"].push_back({{"n", g.n}, {"horizon", g.horizon}});
    for (auto k : c.estimators) j["estimators"].push_back(to_string(k));
    for (const auto& n : c.nuisances) j["nuisance"].push_back(to_string(n));
    j["n_seeds"] = c.n_seeds;
    j["seed"] = c.seed;
    j["output"] = c.output;
    j["format"] = c.format;
    j["logmse"] = c.logmse == LogMse::LogOfMean ? "log-of-mean" : "mean-of-log";
    j["ci_level"] = c.ci_level;
    const auto& n = c.nuisance;
    j["nuisance_config"] = {{"ratio_dim", n.ratio_dim},     {"sieve_dim", n.sieve_dim},
                            {"mediator_basis", n.mediator_basis}, {"lambda_grid", n.lambda_grid},
                            {"cv_folds", n.cv_folds},       {"mc_draws", n.mc_draws},
                            {"clip_lo", n.clip_lo},         {"clip_hi", n.clip_hi},
                            {"ratio_floor", n.ratio_floor}, {"ratio_ridge", n.ratio_ridge},
                            {"reward_ridge", n.reward_ridge}, {"feature_seed", n.feature_seed},
                            {"mc_seed", n.mc_seed}};
    j["corruption"] = {{"seed", c.corruption.seed},
                       {"omega_target_shift", c.corruption.omega_target_shift},
                       {"omega_other_shift", c.corruption.omega_other_shift},
                       {"noise_sd", c.corruption.noise_sd}};
    j["oracle"] = {{"kind", c.oracle.kind},
                   {"n_traj", c.oracle.n_traj},
                   {"horizon", c.oracle.horizon},
                   {"seed", c.oracle.seed}};
    if (c.oracle.effects) j["oracle"]["effects"] = detail::effects_json(*c.oracle.effects);
    if (c.oracle.alternative) j["oracle"]["alternative"] = detail::effects_json(*c.oracle.alternative);
    return j;
}

/// Missing keys keep their defaults; unknown keys are rejected so typos do
/// not silently fall back.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{"name",    "env",     "sigma",  "grid",   "estimators",
                                                "nuisance", "n_seeds", "seed",   "output", "format",
                                                "logmse",  "ci_level", "nuisance_config", "corruption", "oracle"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    if (j.contains("env")) c.env.kind = environment_kind_from_string(j.at("env").get<std::string>());
    c.env.sigma = j.value("sigma", c.env.sigma);
    if (j.contains("grid"))
        for (const auto& g : j.at("grid")) c.grid.push_back({g.at("n").get<int>(), g.at("horizon").get<int>()});
    if (j.contains("estimators"))
        for (const auto& e : j.at("estimators")) c.estimators.push_back(estimator_from_string(e.get<std::string>()));
    if (j.contains("nuisance")) {
        c.nuisances.clear();
        const auto& n = j.at("nuisance");
        if (n.is_string())
            c.nuisances.push_back(nuisance_source_from_string(n.get<std::string>()));
        else
            for (const auto& s : n) c.nuisances.push_back(nuisance_source_from_string(s.get<std::string>()));
    }
    c.n_seeds = j.value("n_seeds", c.n_seeds);
    c.seed = j.value("seed", c.seed);
    c.output = j.value("output", c.output);
    c.format = j.value("format", c.format);
    if (j.contains("logmse")) {
        const auto s = j.at("logmse").get<std::string>();
        if (s == "log-of-mean")
            c.logmse = LogMse::LogOfMean;
        else if (s == "mean-of-log")
            c.logmse = LogMse::MeanOfLog;
        else
            throw std::invalid_argument("config: logmse must be log-of-mean or mean-of-log");
    }
    c.ci_level = j.value("ci_level", c.ci_level);
    if (j.contains("nuisance_config")) {
        const auto& n = j.at("nuisance_config");
        auto& d = c.nuisance;
        d.ratio_dim = n.value("ratio_dim", d.ratio_dim);
        d.sieve_dim = n.value("sieve_dim", d.sieve_dim);
        d.mediator_basis = n.value("mediator_basis", d.mediator_basis);
        d.lambda_grid = n.value("lambda_grid", d.lambda_grid);
        d.cv_folds = n.value("cv_folds", d.cv_folds);
        d.mc_draws = n.value("mc_draws", d.mc_draws);
        d.clip_lo = n.value("clip_lo", d.clip_lo);
        d.clip_hi = n.value("clip_hi", d.clip_hi);
        d.ratio_floor = n.value("ratio_floor", d.ratio_floor);
        d.ratio_ridge = n.value("ratio_ridge", d.ratio_ridge);
        d.reward_ridge = n.value("reward_ridge", d.reward_ridge);
        d.feature_seed = n.value("feature_seed", d.feature_seed);
        d.mc_seed = n.value("mc_seed", d.mc_seed);
    }
    if (j.contains("corruption")) {
        const auto& n = j.at("corruption");
        auto& d = c.corruption;
        d.seed = n.value("seed", d.seed);
        d.omega_target_shift = n.value("omega_target_shift", d.omega_target_shift);
        d.omega_other_shift = n.value("omega_other_shift", d.omega_other_shift);
        d.noise_sd = n.value("noise_sd", d.noise_sd);
    }
    if (j.contains("oracle")) {
        const auto& o = j.at("oracle");
        c.oracle.kind = o.value("kind", c.oracle.kind);
        c.oracle.n_traj = o.value("n_traj", c.oracle.n_traj);
        c.oracle.horizon = o.value("horizon", c.oracle.horizon);
        c.oracle.seed = o.value("seed", c.oracle.seed);
        if (o.contains("effects")) c.oracle.effects = detail::effects_from_json(o.at("effects"));
        if (o.contains("alternative")) c.oracle.alternative = detail::effects_from_json(o.at("alternative"));
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config " + path);
    try {
        return config_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Ground truth

inline nlohmann::json to_json(const OracleValues& o) {
    nlohmann::json j;
    j["exact"] = o.exact;
    for (int i = 0; i < kRegimeCount; ++i) {
        const auto r = static_cast<Regime>(i);
        j["eta"][to_string(r)] = o.eta[static_cast<std::size_t>(i)];
        if (!o.exact) j["eta_se"][to_string(r)] = o.eta_se[static_cast<std::size_t>(i)];
    }
    j["effects"] = detail::effects_json(o.effects);
    j["alternative"] = detail::effects_json(o.alternative);
    if (!o.exact) {
        j["effects_se"] = detail::effects_json(o.effects_se);
        j["alternative_se"] = detail::effects_json(o.alternative_se);
        j["n_traj"] = o.n_traj;
        j["horizon"] = o.horizon;
        j["burn_in"] = o.burn_in;
    }
    return j;
}

inline nlohmann::json to_json(const EffectEstimate& e, double ci_level = 0.95) {
    nlohmann::json j;
    j["estimator"] = to_string(e.kind);
    j["baseline_only"] = e.baseline_only;
    const auto p = e.effects.as_array();
    for (std::size_t i = 0; i < 5; ++i) {
        const bool used = !(e.baseline_only && i >= 2);
        j["effects"][kEffectNames[i]] = used && std::isfinite(p[i]) ? nlohmann::json(p[i]) : nlohmann::json(nullptr);
    }
    if (e.se) {
        const auto s = e.se->as_array();
        const auto ci = wald_ci(e, ci_level);
        j["ci_level"] = ci_level;
        for (std::size_t i = 0; i < 5; ++i) {
            if (e.baseline_only && i >= 2) continue;
            j["se"][kEffectNames[i]] = s[i];
            j["ci"][kEffectNames[i]] = {ci[i].lo, ci[i].hi};
        }
    }
    for (int i = 0; i < kRegimeCount; ++i) {
        const double v = e.eta[static_cast<std::size_t>(i)];
        if (std::isfinite(v)) j["eta"][to_string(static_cast<Regime>(i))] = v;
    }
    return j;
}

struct Truth {
    EffectValues effects;
    EffectValues alternative;
    std::string source;
};

inline Truth resolve_truth(const ExperimentConfig& cfg, const Environment& env) {
    const OracleSource& o = cfg.oracle;
    if (o.effects) {
        // alternative ATE equals the primary one; components unknown unless given
        EffectValues alt;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        alt = o.alternative.value_or(EffectValues{nan, nan, nan, nan, o.effects->ate});
        return {*o.effects, alt, "config"};
    }
    std::string kind = o.kind;
    if (kind == "auto") kind = env.spec.is_finite() ? "exact" : "mc";
    if (kind == "exact") {
        const OracleValues v = exact_tabular_oracle(env.spec, env.target, env.control, env.behavior);
        return {v.effects, v.alternative, "exact"};
    }
    if (kind == "mc") {
        const OracleValues v = mc_oracle(env.spec, env.target, env.control, o.n_traj, o.horizon, o.seed);
        return {v.effects, v.alternative, "mc"};
    }
    throw std::invalid_argument("oracle kind must be auto, exact or mc");
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
    std::string estimator;
    std::string effect;
    int n = 0;
    int horizon = 0;
    std::string scenario;
    int n_seeds = 0;       // successful replications
    double truth = 0.0;
    double mean = 0.0;
    double bias = 0.0;
    double logbias = 0.0;
    double mse = 0.0;
    double logmse = 0.0;
    double se = 0.0;       // empirical standard error of the mean over seeds
    std::optional<double> coverage;
    std::string note;

    bool operator==(const MetricsRow&) const = default;
};

inline constexpr std::array<const char*, 15> kMetricsColumns{
    "estimator", "effect", "n", "horizon", "scenario", "n_seeds", "truth", "mean",
    "bias",      "logbias", "mse", "logmse", "se",     "coverage", "note"};

namespace detail {

struct Replicate {
    std::array<double, 5> effects{};
    std::array<bool, 5> covered{};
    bool has_ci = false;
    bool ok = false;
    std::string error;
};

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

inline MetricsRow aggregate(const std::vector<Replicate>& reps, std::size_t j, double truth, LogMse conv) {
    MetricsRow row;
    std::vector<double> x;
    int covered = 0, with_ci = 0;
    std::string error;
    for (const auto& r : reps) {
        if (!r.ok) {
            if (error.empty()) error = r.error;
            continue;
        }
        if (!std::isfinite(r.effects[j])) continue;
        x.push_back(r.effects[j]);
        if (r.has_ci) {
            ++with_ci;
            covered += r.covered[j] ? 1 : 0;
        }
    }
    row.n_seeds = static_cast<int>(x.size());
    row.truth = truth;
    if (x.empty()) {
        row.mean = row.bias = row.logbias = row.mse = row.logmse = row.se = nan();
        row.note = error.empty() ? "not estimated" : error;
        return row;
    }
    const double n = static_cast<double>(x.size());
    double s = 0.0, se2 = 0.0, slog = 0.0;
    for (double v : x) {
        s += v;
        se2 += (v - truth) * (v - truth);
        slog += std::log((v - truth) * (v - truth));
    }
    row.mean = s / n;
    row.bias = row.mean - truth;
    row.logbias = std::log(std::abs(row.bias));
    row.mse = se2 / n;
    row.logmse = conv == LogMse::LogOfMean ? std::log(row.mse) : slog / n;
    double ss = 0.0;
    for (double v : x) ss += (v - row.mean) * (v - row.mean);
    row.se = x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    if (with_ci > 0) row.coverage = static_cast<double>(covered) / with_ci;
    if (!error.empty()) row.note = "some replications failed: " + error;
    return row;
}

}  // namespace detail

/// Seed for replication `rep` of grid cell (n, horizon). Independent of the
/// grid order so a cell reproduces across configs.
inline std::uint64_t replicate_seed(std::uint64_t master, const GridCell& c, int rep) {
    return derive_seed({master, static_cast<std::uint64_t>(c.n), static_cast<std::uint64_t>(c.horizon),
                        static_cast<std::uint64_t>(rep)});
}

/// Simulate, construct nuisances, estimate and aggregate. Rows are ordered by
/// grid cell, nuisance source, estimator, effect; replications run in
/// parallel and are reduced in seed order.
inline std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg, const Truth* truth_in = nullptr) {
    cfg.validate();
    const Environment env = build_environment(cfg.env);
    const Truth truth = truth_in != nullptr ? *truth_in : resolve_truth(cfg, env);
    const bool need_alt =
        std::find(cfg.estimators.begin(), cfg.estimators.end(), EstimatorKind::MRAlt) != cfg.estimators.end();
    const std::size_t n_src = cfg.nuisances.size(), n_est = cfg.estimators.size();

    std::vector<MetricsRow> rows;
    for (const auto& cell : cfg.grid) {
        // reps[src][est][seed]
        std::vector<std::vector<std::vector<detail::Replicate>>> reps(
            n_src, std::vector<std::vector<detail::Replicate>>(n_est, std::vector<detail::Replicate>(
                                                                          static_cast<std::size_t>(cfg.n_seeds))));
#pragma omp parallel for schedule(dynamic, 1)
        for (int rep = 0; rep < cfg.n_seeds; ++rep) {
            const auto seed = replicate_seed(cfg.seed, cell, rep);
            const TupleData data = make_tuple_data(sample_dataset(env.spec, env.behavior, cell.n, cell.horizon, seed));
            for (std::size_t si = 0; si < n_src; ++si) {
                std::optional<NuisanceSet> ns;
                std::optional<EstimationContext> ctx;
                std::string setup_error;
                try {
                    ns = make_nuisances(cfg.nuisances[si], env, data, cell.horizon, cfg.nuisance, cfg.corruption,
                                        need_alt);
                    ctx.emplace(data, *ns, env.target, env.control);
                } catch (const std::exception& e) {
                    setup_error = e.what();
                }
                for (std::size_t ei = 0; ei < n_est; ++ei) {
                    auto& out = reps[si][ei][static_cast<std::size_t>(rep)];
                    if (!setup_error.empty()) {
                        out.error = setup_error;
                        continue;
                    }
                    try {
                        const EstimatorKind k = cfg.estimators[ei];
                        const EffectEstimate e = k == EstimatorKind::DM ? dm_effects(*ns) : estimate_effects(*ctx, k);
                        out.effects = e.effects.as_array();
                        if (e.baseline_only) out.effects[2] = out.effects[3] = out.effects[4] = detail::nan();
                        if (e.se) {
                            const auto ci = wald_ci(e, cfg.ci_level);
                            const auto t = (k == EstimatorKind::MRAlt ? truth.alternative : truth.effects).as_array();
                            out.has_ci = true;
                            for (std::size_t j = 0; j < 5; ++j) out.covered[j] = ci[j].covers(t[j]);
                        }
                        out.ok = true;
                    } catch (const std::exception& ex) {
                        out.error = ex.what();
                    }
                }
            }
        }
        for (std::size_t si = 0; si < n_src; ++si)
            for (std::size_t ei = 0; ei < n_est; ++ei) {
                const EstimatorKind k = cfg.estimators[ei];
                const auto t = (k == EstimatorKind::MRAlt ? truth.alternative : truth.effects).as_array();
                for (std::size_t j = 0; j < 5; ++j) {
                    MetricsRow row = detail::aggregate(reps[si][ei], j, t[j], cfg.logmse);
                    row.estimator = to_string(k);
                    row.effect = kEffectNames[j];
                    row.n = cell.n;
                    row.horizon = cell.horizon;
                    row.scenario = to_string(cfg.nuisances[si]);
                    rows.push_back(std::move(row));
                }
            }
    }
    return rows;
}

/// The row for (estimator, effect, scenario, n), or throws.
inline const MetricsRow& find_row(const std::vector<MetricsRow>& rows, const std::string& estimator,
                                  const std::string& effect, const std::string& scenario, int n = -1) {
    for (const auto& r : rows)
        if (r.estimator == estimator && r.effect == effect && r.scenario == scenario && (n < 0 || r.n == n)) return r;
    throw std::out_of_range("no row for " + estimator + "/" + effect + "/" + scenario);
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_real(const std::string& s) {
    if (s == "nan" || s == "-nan") return nan();
    return std::stod(s);
}

inline nlohmann::json real_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double real_from_json(const nlohmann::json& j) { return j.is_null() ? nan() : j.get<double>(); }

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) os << (i ? "," : "") << kMetricsColumns[i];
    os << '\n';
    for (const auto& r : rows) {
        os << detail::csv_field(r.estimator) << ',' << r.effect << ',' << r.n << ',' << r.horizon << ','
           << detail::csv_field(r.scenario) << ',' << r.n_seeds << ',' << format_real(r.truth) << ','
           << format_real(r.mean) << ',' << format_real(r.bias) << ',' << format_real(r.logbias) << ','
           << format_real(r.mse) << ',' << format_real(r.logmse) << ',' << format_real(r.se) << ','
           << (r.coverage ? format_real(*r.coverage) : std::string{}) << ',' << detail::csv_field(r.note) << '\n';
    }
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("metrics csv: empty input");
    const auto header = detail::split_csv_line(line);
    if (header.size() != kMetricsColumns.size()) throw std::runtime_error("metrics csv: unexpected header");
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] != kMetricsColumns[i]) throw std::runtime_error("metrics csv: unexpected column " + header[i]);
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != kMetricsColumns.size()) throw std::runtime_error("metrics csv: bad row '" + line + "'");
        MetricsRow r;
        r.estimator = f[0];
        r.effect = f[1];
        r.n = std::stoi(f[2]);
        r.horizon = std::stoi(f[3]);
        r.scenario = f[4];
        r.n_seeds = std::stoi(f[5]);
        r.truth = detail::parse_real(f[6]);
        r.mean = detail::parse_real(f[7]);
        r.bias = detail::parse_real(f[8]);
        r.logbias = detail::parse_real(f[9]);
        r.mse = detail::parse_real(f[10]);
        r.logmse = detail::parse_real(f[11]);
        r.se = detail::parse_real(f[12]);
        if (!f[13].empty()) r.coverage = detail::parse_real(f[13]);
        r.note = f[14];
        rows.push_back(std::move(r));
    }
    return rows;
}

inline nlohmann::json metrics_to_json(const std::vector<MetricsRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json j;
        j["estimator"] = r.estimator;
        j["effect"] = r.effect;
        j["n"] = r.n;
        j["horizon"] = r.horizon;
        j["scenario"] = r.scenario;
        j["n_seeds"] = r.n_seeds;
        j["truth"] = detail::real_json(r.truth);
        j["mean"] = detail::real_json(r.mean);
        j["bias"] = detail::real_json(r.bias);
        j["logbias"] = detail::real_json(r.logbias);
        j["mse"] = detail::real_json(r.mse);
        j["logmse"] = detail::real_json(r.logmse);
        j["se"] = detail::real_json(r.se);
        j["coverage"] = r.coverage ? detail::real_json(*r.coverage) : nlohmann::json(nullptr);
        j["note"] = r.note;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<MetricsRow> metrics_from_json(const nlohmann::json& arr) {
    if (!arr.is_array()) throw std::runtime_error("metrics json: expected an array");
    std::vector<MetricsRow> rows;
    for (const auto& j : arr) {
        MetricsRow r;
        r.estimator = j.at("estimator").get<std::string>();
        r.effect = j.at("effect").get<std::string>();
        r.n = j.at("n").get<int>();
        r.horizon = j.at("horizon").get<int>();
        r.scenario = j.at("scenario").get<std::string>();
        r.n_seeds = j.at("n_seeds").get<int>();
        r.truth = detail::real_from_json(j.at("truth"));
        r.mean = detail::real_from_json(j.at("mean"));
        r.bias = detail::real_from_json(j.at("bias"));
        r.logbias = detail::real_from_json(j.at("logbias"));
        r.mse = detail::real_from_json(j.at("mse"));
        r.logmse = detail::real_from_json(j.at("logmse"));
        r.se = detail::real_from_json(j.at("se"));
        if (!j.at("coverage").is_null()) r.coverage = j.at("coverage").get<double>();
        r.note = j.value("note", std::string{});
        rows.push_back(std::move(r));
    }
    return rows;
}

enum class MetricsFormat { Csv, Json };

inline MetricsFormat metrics_format_from_string(const std::string& s) {
    if (s == "csv") return MetricsFormat::Csv;
    if (s == "json") return MetricsFormat::Json;
    throw std::invalid_argument("format must be csv or json");
}

inline void emit(const std::vector<MetricsRow>& rows, MetricsFormat fmt, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    if (fmt == MetricsFormat::Csv)
        write_metrics_csv(os, rows);
    else
        os << metrics_to_json(rows).dump(2) << '\n';
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<MetricsRow> load_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    const bool json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
    return json ? metrics_from_json(nlohmann::json::parse(is)) : read_metrics_csv(is);
}

// NaN never compares equal; rows read back from disk are compared with this.
inline bool same_row(const MetricsRow& a, const MetricsRow& b) {
    auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.estimator == b.estimator && a.effect == b.effect && a.n == b.n && a.horizon == b.horizon &&
           a.scenario == b.scenario && a.n_seeds == b.n_seeds && eq(a.truth, b.truth) && eq(a.mean, b.mean) &&
           eq(a.bias, b.bias) && eq(a.logbias, b.logbias) && eq(a.mse, b.mse) && eq(a.logmse, b.logmse) &&
           eq(a.se, b.se) && a.coverage.has_value() == b.coverage.has_value() &&
           (!a.coverage || eq(*a.coverage, *b.coverage)) && a.note == b.note;
}

}  // namespace mmdp
