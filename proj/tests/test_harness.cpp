#include "mmdp/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace mmdp;

namespace {

ExperimentConfig smoke_config() {
    ExperimentConfig c;
    c.env = {EnvironmentKind::ToyBinary, 2.0};
    c.grid = {{20, 20}};
    c.estimators = {EstimatorKind::DM};
    c.nuisances = {nuisance_source_from_string("oracle")};
    c.n_seeds = 1;
    return c;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("mmdp_test_" + name)).string();
}

void expect_same_rows(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_row(a[i], b[i])) << "row " << i;
}

}  // namespace

TEST(TrajectoryCsv, RoundTripFinite) {
    const Environment env = build_environment({EnvironmentKind::ToyBinary, 2.0});
    const auto trajs = sample_dataset(env.spec, env.behavior, 4, 7, 1);
    std::stringstream ss;
    write_trajectories_csv(ss, trajs, shape_of(env.spec));
    EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "traj_id,t,s0,a,m0,r,s_next0");
    const auto back = read_trajectories_csv(ss);
    ASSERT_EQ(back.size(), trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        EXPECT_EQ(back[i].id, trajs[i].id);
        ASSERT_EQ(back[i].size(), trajs[i].size());
        for (std::size_t t = 0; t < trajs[i].size(); ++t) {
            const auto &x = trajs[i].steps[t], &y = back[i].steps[t];
            EXPECT_EQ(x.s, y.s);
            EXPECT_EQ(x.a, y.a);
            EXPECT_EQ(x.m, y.m);
            EXPECT_EQ(x.r, y.r);
            EXPECT_EQ(x.s_next, y.s_next);
        }
    }
}

TEST(TrajectoryCsv, RoundTripRealsBitExact) {
    const Environment env = build_environment({EnvironmentKind::MultiDim, 1.0});
    const auto trajs = sample_dataset(env.spec, env.behavior, 3, 5, 2);
    std::stringstream ss;
    write_trajectories_csv(ss, trajs, shape_of(env.spec));
    const auto back = read_trajectories_csv(ss);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < trajs.size(); ++i)
        for (std::size_t t = 0; t < trajs[i].size(); ++t) {
            EXPECT_EQ(back[i].steps[t].s, trajs[i].steps[t].s);
            EXPECT_EQ(back[i].steps[t].m, trajs[i].steps[t].m);
            EXPECT_EQ(back[i].steps[t].r, trajs[i].steps[t].r);
        }
}

TEST(TrajectoryCsv, MalformedInputRejected) {
    std::stringstream bad_header("id,t,s0,a,m0,r\n");
    EXPECT_THROW(read_trajectories_csv(bad_header), std::runtime_error);
    std::stringstream short_row("traj_id,t,s0,a,m0,r,s_next0\n0,0,1,0\n");
    EXPECT_THROW(read_trajectories_csv(short_row), std::runtime_error);
    std::stringstream gap("traj_id,t,s0,a,m0,r,s_next0\n0,0,1,0,1,0,1\n0,2,1,0,1,0,1\n");
    EXPECT_THROW(read_trajectories_csv(gap), std::runtime_error);
}

TEST(Descriptor, RoundTrip) {
    const Environment env = build_environment({EnvironmentKind::SemiSynthetic, 3.0});
    const DatasetDescriptor d = describe(env, 10, 25, 99);
    const DatasetDescriptor e = descriptor_from_json(nlohmann::json::parse(to_json(d).dump()));
    EXPECT_EQ(e.env.kind, EnvironmentKind::SemiSynthetic);
    EXPECT_EQ(e.env.sigma, 3.0);
    EXPECT_EQ(e.shape.mediator_dim, 2);
    EXPECT_EQ(e.shape.state_kind, SpaceKind::Continuous);
    EXPECT_EQ(e.n_traj, 10);
    EXPECT_EQ(e.horizon, 25);
    EXPECT_EQ(e.seed, 99u);
}

TEST(Config, JsonRoundTripAndValidation) {
    ExperimentConfig c = smoke_config();
    c.estimators = {EstimatorKind::MR, EstimatorKind::BaseIPW};
    c.nuisances = {nuisance_source_from_string("corrupt:m3"), nuisance_source_from_string("fitted")};
    c.logmse = LogMse::MeanOfLog;
    c.nuisance.lambda_grid = {1e-3};
    const ExperimentConfig d = config_from_json(to_json(c));
    EXPECT_EQ(to_json(d), to_json(c));
    EXPECT_EQ(to_string(d.nuisances[0]), "corrupt:m3");

    nlohmann::json j = to_json(c);
    j["n_seeds"] = 0;
    EXPECT_THROW(config_from_json(j), std::invalid_argument);
    j = to_json(c);
    j["grid"] = nlohmann::json::array();
    EXPECT_THROW(config_from_json(j), std::invalid_argument);
    j = to_json(c);
    j["n_seed"] = 3;
    EXPECT_THROW(config_from_json(j), std::invalid_argument);
    EXPECT_THROW(nuisance_source_from_string("exact"), std::invalid_argument);
}

TEST(Experiment, SmokeDmGivesFiveRows) {
    const auto rows = run_experiment(smoke_config());
    ASSERT_EQ(rows.size(), 5u);
    for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_EQ(rows[j].effect, kEffectNames[j]);
        EXPECT_TRUE(std::isfinite(rows[j].mean));
        EXPECT_EQ(rows[j].n_seeds, 1);
        EXPECT_FALSE(rows[j].coverage.has_value());
        // DM on exact tables reproduces the truth
        EXPECT_NEAR(rows[j].bias, 0.0, 1e-12);
    }
}

TEST(Experiment, RowCountIndependentOfSeeds) {
    ExperimentConfig c = smoke_config();
    c.grid = {{10, 10}, {20, 10}};
    c.estimators = {EstimatorKind::DM, EstimatorKind::MIS1, EstimatorKind::MR};
    for (int seeds : {1, 3}) {
        c.n_seeds = seeds;
        EXPECT_EQ(run_experiment(c).size(), 2u * 3u * 5u);
    }
}

TEST(Experiment, DeterministicAndOrderFree) {
    ExperimentConfig c = smoke_config();
    c.grid = {{15, 10}, {25, 10}};
    c.estimators = {EstimatorKind::MR, EstimatorKind::MIS2};
    c.nuisances = {nuisance_source_from_string("fitted")};
    c.n_seeds = 3;
    const auto a = run_experiment(c);
    const auto b = run_experiment(c);
    expect_same_rows(a, b);
    // swapping the grid order permutes the cells without changing them
    ExperimentConfig r = c;
    std::swap(r.grid[0], r.grid[1]);
    const auto s = run_experiment(r);
    const std::size_t half = a.size() / 2;
    for (std::size_t i = 0; i < half; ++i) EXPECT_TRUE(same_row(a[i], s[i + half]));
}

TEST(Experiment, FailuresReportedPerRow) {
    ExperimentConfig c = smoke_config();
    c.env = {EnvironmentKind::SemiSynthetic, 2.0};
    c.oracle.effects = EffectValues{1, 1, 1, 1, 4};
    const auto rows = run_experiment(c);  // oracle nuisances need a finite environment
    ASSERT_EQ(rows.size(), 5u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.n_seeds, 0);
        EXPECT_TRUE(std::isnan(r.mean));
        EXPECT_NE(r.note.find("finite"), std::string::npos);
    }
}

TEST(Experiment, CoverageOnlyWithStandardErrors) {
    ExperimentConfig c = smoke_config();
    c.estimators = {EstimatorKind::MR, EstimatorKind::BaseMR};
    c.n_seeds = 4;
    const auto rows = run_experiment(c);
    ASSERT_EQ(rows.size(), 10u);
    for (std::size_t j = 0; j < 5; ++j) {
        ASSERT_TRUE(rows[j].coverage.has_value());
        EXPECT_GE(*rows[j].coverage, 0.0);
        EXPECT_LE(*rows[j].coverage, 1.0);
        EXPECT_FALSE(rows[5 + j].coverage.has_value());
    }
    EXPECT_EQ(rows[7].note, "not estimated");
}

TEST(Metrics, LogMseConventions) {
    std::vector<detail::Replicate> reps(2);
    reps[0].ok = reps[1].ok = true;
    reps[0].effects[0] = 1.0;  // errors 1 and 3 around truth 0
    reps[1].effects[0] = 3.0;
    const MetricsRow a = detail::aggregate(reps, 0, 0.0, LogMse::LogOfMean);
    const MetricsRow b = detail::aggregate(reps, 0, 0.0, LogMse::MeanOfLog);
    EXPECT_DOUBLE_EQ(a.mse, 5.0);
    EXPECT_DOUBLE_EQ(a.logmse, std::log(5.0));
    EXPECT_DOUBLE_EQ(b.logmse, 0.5 * (std::log(1.0) + std::log(9.0)));
    EXPECT_DOUBLE_EQ(a.bias, 2.0);
    EXPECT_DOUBLE_EQ(a.logbias, std::log(2.0));
    EXPECT_DOUBLE_EQ(a.se, std::sqrt(2.0 / 2.0));
}

TEST(Emit, EmptyRowsGiveHeaderOnlyCsv) {
    const std::string path = temp_path("empty.csv");
    emit({}, MetricsFormat::Csv, path);
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    EXPECT_EQ(ss.str(), "estimator,effect,n,horizon,scenario,n_seeds,truth,mean,bias,logbias,mse,logmse,se,coverage,note\n");
    EXPECT_TRUE(load_metrics(path).empty());
    std::filesystem::remove(path);
}

TEST(Emit, RoundTripCsvAndJson) {
    ExperimentConfig c = smoke_config();
    c.estimators = {EstimatorKind::MR, EstimatorKind::BaseDM};
    c.n_seeds = 2;
    auto rows = run_experiment(c);
    rows[0].note = "comma, and \"quote\"";
    for (const auto fmt : {MetricsFormat::Csv, MetricsFormat::Json}) {
        const std::string path = temp_path(fmt == MetricsFormat::Csv ? "rows.csv" : "rows.json");
        emit(rows, fmt, path);
        expect_same_rows(load_metrics(path), rows);
        std::filesystem::remove(path);
    }
}

TEST(Emit, JsonArrayLength) {
    const auto rows = run_experiment(smoke_config());
    const std::string path = temp_path("five.json");
    emit(rows, MetricsFormat::Json, path);
    std::ifstream is(path);
    const auto j = nlohmann::json::parse(is);
    ASSERT_TRUE(j.is_array());
    EXPECT_EQ(j.size(), 5u);
    std::filesystem::remove(path);
}

TEST(Emit, UnwritablePathThrows) {
    EXPECT_THROW(emit({}, MetricsFormat::Csv, "/nonexistent-dir/x/rows.csv"), std::runtime_error);
}

TEST(OracleJson, ExactFields) {
    const Environment env = build_environment({EnvironmentKind::ToyBinary, 2.0});
    const auto j = to_json(exact_tabular_oracle(env.spec, env.target, env.control, env.behavior));
    EXPECT_TRUE(j.at("exact").get<bool>());
    EXPECT_NEAR(j.at("effects").at("ide").get<double>(), -1.2767, 1e-4);
    EXPECT_FALSE(j.contains("effects_se"));
}
