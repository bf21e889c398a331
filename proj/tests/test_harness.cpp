#include <wlnn/harness.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace wlnn;

namespace {

ExperimentConfig small_sweep() {
    ExperimentConfig c;
    c.d = 3;
    c.widths = {16, 32};
    c.seeds = 6;
    c.kappa_max = 30;
    c.tau = 0.1;
    return c;
}

} // namespace

TEST(Config, DefaultsFollowTheDeskProfile) {
    ExperimentConfig c = config_from_json(nlohmann::json::object());
    EXPECT_EQ(c.d, 10);
    EXPECT_EQ(c.tau, 0.2);
    EXPECT_EQ(c.kappa_max, 1000);
    EXPECT_EQ(c.widths, (std::vector<int>{32, 64, 128, 256, 512}));
    EXPECT_EQ(c.seeds, 50);
    EXPECT_EQ(c.flow.tau, 1e-3);
    EXPECT_EQ(c.loss.kind, LossKind::square);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
    EXPECT_THROW(config_from_json({{"widht", 3}}), ConfigError);
    EXPECT_THROW(config_from_json({{"flow", {{"steps", 3}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"init", {{"W", "gaussian"}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"init", {{"U", "cauchy"}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"d", "ten"}}), ConfigError);
    EXPECT_THROW(config_from_json({{"basis", {{"k", 3}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"multilayer", {{"layers", 3}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"histogram", {{"bin", 3}}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"trajectory", {{"s", 3}}}}), ConfigError);
}

TEST(Config, InvariantsValidated) {
    EXPECT_THROW(config_from_json({{"widths", {64, 32}}}), ConfigError);
    EXPECT_THROW(config_from_json({{"seeds", 0}}), ConfigError);
    EXPECT_THROW(config_from_json({{"tau", -1.0}}), ConfigError);
    EXPECT_THROW(config_from_json({{"loss", "hinge"}}), ConfigError);
    EXPECT_THROW(config_from_json({{"d", 2}, {"data", {{"kind", "synthetic_teacher"}, {"d", 3}, {"teacher", {1, 2, 3}}}}}),
                 ConfigError);
}

TEST(Config, RoundTripThroughJson) {
    nlohmann::json j = {{"d", 2},
                        {"seed", 11},
                        {"loss", {{"custom_table", {{-1, -1}, {1, 1}}}}},
                        {"data", {{"kind", "empirical"}, {"d", 2}, {"samples", {{1, 0, 1}, {0, 2, 0}}}}},
                        {"init", {{"Z", "rademacher"}}},
                        {"n_samples", nullptr},
                        {"multilayer", {{"kappa", 4}}}};
    ExperimentConfig c = config_from_json(j);
    EXPECT_EQ(c.init.Z, Dist::rademacher);
    EXPECT_FALSE(c.n_samples.has_value());
    ExperimentConfig back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
    EXPECT_EQ(back.loss.kind, LossKind::custom_table);
    EXPECT_EQ(back.multilayer.kappa, 4);
}

TEST(Config, GeneratedDataIsSeededAndSized) {
    ExperimentConfig c;
    c.d = 4;
    DataSpec a = make_data(c), b = make_data(c);
    ASSERT_EQ(a.kind, DataKind::empirical);
    EXPECT_EQ(a.samples.size(), 5u);
    EXPECT_EQ(a.samples[3].x, b.samples[3].x);
    c.n_samples.reset();
    EXPECT_EQ(make_data(c).kind, DataKind::synthetic_teacher);
    ExperimentConfig other = c;
    other.seed = 3;
    EXPECT_NE(make_data(other).teacher, make_data(c).teacher);
}

TEST(Checkpoints, DefaultGridHasEndpointsAndLogSpacing) {
    ExperimentConfig c;
    auto g = checkpoint_grid(c);
    EXPECT_EQ(g.front(), 0);
    EXPECT_EQ(g.back(), 1000);
    EXPECT_GE(g.size(), 15u);
    EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
    c.checkpoints = {0, 7, 1000};
    EXPECT_EQ(checkpoint_grid(c), (std::vector<long>{0, 7, 1000}));
}

TEST(ParallelFor, VisitsEveryIndexOnceAndPropagatesErrors) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
    EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 5) throw std::runtime_error("x"); }), std::runtime_error);
}

TEST(WidthSweep, ThreadCountDoesNotChangeResults) {
    ExperimentConfig c = small_sweep();
    SweepResult a = run_width_sweep(c);
    c.threads = 3;
    SweepResult b = run_width_sweep(c);
    EXPECT_EQ(sweep_csv(a), sweep_csv(b));
    EXPECT_EQ(sweep_summary_csv(a), sweep_summary_csv(b));
}

TEST(WidthSweep, CellsDependOnlyOnWidthAndSeed) {
    ExperimentConfig c = small_sweep();
    SweepResult full = run_width_sweep(c);
    c.widths = {32};
    SweepResult one = run_width_sweep(c);
    std::vector<SweepRow> tail;
    for (const auto& r : full.rows)
        if (r.m == 32) tail.push_back(r);
    ASSERT_EQ(tail.size(), one.rows.size());
    for (std::size_t i = 0; i < tail.size(); ++i) EXPECT_EQ(tail[i].sq_error, one.rows[i].sq_error);
}

TEST(WidthSweep, InitialErrorIsDOverM) {
    ExperimentConfig c = small_sweep();
    c.widths = {64};
    c.seeds = 50;
    c.kappa_max = 0;
    SweepResult r = run_width_sweep(c);
    ASSERT_EQ(r.summary.size(), 1u);
    EXPECT_NEAR(r.summary[0].mean_sq_error / (3.0 / 64.0), 1.0, 0.25);
    EXPECT_NEAR(r.summary[0].mean_rel_gap, 0.0, 0.3); // v_0 near ||B(0)||^2 = 1
}

TEST(WidthSweep, DivergedRunsAreRecordedNotFatal) {
    ExperimentConfig c = small_sweep();
    c.widths = {4};
    c.seeds = 4;
    c.tau = 0.9;
    c.kappa_max = 200;
    c.n_samples.reset();
    SweepResult r = run_width_sweep(c);
    if (r.limit_divergence < 0) {
        bool any = false;
        for (const auto& row : r.rows) any = any || row.diverged;
        EXPECT_TRUE(any);
    }
    SUCCEED();
}

TEST(Tracking, MeanSquareOfVTracksLimitNorm) {
    ExperimentConfig c = small_sweep();
    c.widths = {64, 256};
    c.seeds = 4;
    SweepResult r = run_width_sweep(c);
    std::vector<double> gaps;
    for (const auto& s : r.summary)
        if (s.kappa == c.kappa_max) gaps.push_back(s.mean_rel_gap);
    ASSERT_EQ(gaps.size(), 2u);
    EXPECT_LT(gaps[1], gaps[0]);
    EXPECT_LT(gaps[1], 0.2);
}

TEST(Trajectory, StartsAtZeroAndLargeScaleIsCloserToLinearPath) {
    ExperimentConfig c;
    c.d = 2;
    c.n_samples.reset();
    c.flow.tau = 1e-3;
    c.flow.T = 8.0;
    c.flow.record_every = 20;
    c.trajectory.scales = {1.0, 10.0};
    c.trajectory.seeds = 1;
    c.trajectory.m = 32;
    TrajectoryReport r = run_trajectory_export(c);
    ASSERT_EQ(r.scales.size(), 2u);
    EXPECT_EQ(r.scales[0].limit.lambdas.front(), Vector::Zero(2));
    EXPECT_LT(r.scales[1].frechet_to_linear, r.scales[0].frechet_to_linear);
    EXPECT_LT(r.scales[1].endpoint_error, 1e-3);
    std::string csv = trajectory_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "kind,s,seed,t,lambda_1,lambda_2");
    EXPECT_NE(csv.find("target,"), std::string::npos);
}

TEST(ImplicitBias, FullRankReachesTeacher) {
    ExperimentConfig c;
    c.d = 10;
    c.n_samples.reset();
    c.flow.T = 50.0;
    ImplicitBiasReport r = run_implicit_bias(c);
    EXPECT_LT(r.endpoint_error, 1e-4);
    EXPECT_LT(r.rate.rate, -0.01);
    EXPECT_GT(r.rate.r2, 0.95);
}

TEST(ImplicitBias, RejectsNonSquareLoss) {
    ExperimentConfig c;
    c.loss = LossSpec::logistic();
    EXPECT_THROW(run_implicit_bias(c), ConfigError);
}

TEST(Histogram, UniformInitHasUniformKurtosis) {
    ExperimentConfig c;
    c.d = 3;
    c.init = InitSpec::all(Dist::uniform);
    c.histogram.m = 400;
    c.histogram.kappa = 0;
    c.histogram.seeds = 3;
    HistogramReport r = run_nongaussian_histogram(c);
    EXPECT_NEAR(r.kurtosis_init, -1.2, 0.15);
    EXPECT_EQ(r.corrected.size(), 1200u);
    long total = 0;
    for (long n : r.hist_raw.counts) total += n;
    EXPECT_EQ(total, 1200);
}

TEST(Basis, SmallRunProducesAllTables) {
    ExperimentConfig c;
    c.basis.widths = {16, 32};
    c.basis.seeds = 10;
    c.basis.moment_m = 16;
    c.basis.moment_seeds = 10;
    c.basis.enum_m = 5;
    BasisReport r = run_basis_verification(c);
    EXPECT_EQ(r.defects.size(), 2u * 9u);
    for (const auto& e : r.enumeration) EXPECT_TRUE(e.equal) << e.family << e.k;
    EXPECT_EQ(defects_csv(r).substr(0, 42), "m,k1,k2,defect_jj,defect_jk,defect_kk,n_se");
    EXPECT_EQ(moments_csv(r.moments, "J").substr(0, 19), "m,k,p,moment,stderr");
}

TEST(Multilayer, StructuralChecksPass) {
    EXPECT_TRUE(lambda_matches_displayed_blocks());
    EXPECT_TRUE(displayed_lambda_is_transposed_relation(24));
    EXPECT_TRUE(l1_reduction_bit_identical(3, 8, 10, 0.1));
}

TEST(RunExperiment, WritesManifestWithConfigAndSeed) {
    ExperimentConfig c = small_sweep();
    c.output = ::testing::TempDir() + "wlnn_run_experiment";
    c.seed = 99;
    nlohmann::json m = run_experiment(c);
    EXPECT_EQ(m["master_seed"], 99);
    EXPECT_EQ(config_from_json(m["config"]).seed, 99u);
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(c.output) / "sweep.csv"));
    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(c.output) / "manifest.json"));
    c.experiment = "nope";
    EXPECT_THROW(run_experiment(c), ConfigError);
}
