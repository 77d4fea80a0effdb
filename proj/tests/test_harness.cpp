#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dlw/harness/experiment.hpp"
#include "dlw/harness/verify.hpp"

using namespace dlw;
using namespace dlw::harness;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::path(::testing::TempDir()) / ("dlw_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ReplicationResult fake_rep(std::size_t i, double truth, std::vector<std::pair<std::string, double>> estimates) {
    ReplicationResult r;
    r.index = i;
    r.ok = true;
    r.true_att = truth;
    r.true_ate = truth + 0.5;
    for (auto& [name, v] : estimates) r.reports.push_back({name, i, v, 10, 20, {0.0, 0.0, 5.0 + static_cast<double>(i)}});
    return r;
}

ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig cfg;
    cfg.grid.settings = {2};
    cfg.grid.d = {2};
    cfg.grid.n = {400};
    cfg.grid.s_c = {0.3};
    cfg.reps = 3;
    cfg.base_seed = 7;
    cfg.output_dir = out.string();
    cfg.estimators = {"base", "ols", "iptw", "dlw", "dr_dlw_forest"};
    cfg.fit.layers = 2;
    cfg.fit.hidden_units = 8;
    cfg.fit.max_epochs = 6;
    cfg.fit.lr = 1e-3;
    cfg.forest.trees = 5;
    return cfg;
}

} // namespace

TEST(Aggregate, HandBuiltTable) {
    CellOutcome oc;
    oc.reps.push_back(fake_rep(0, 1.0, {{"base", 1.5}, {"dlw", 1.0}, {"ate_dlw", 2.0}}));
    oc.reps.push_back(fake_rep(1, 1.0, {{"base", 2.5}, {"dlw", 0.8}, {"ate_dlw", 1.5}}));
    oc.reps.push_back(fake_rep(2, 2.0, {{"base", 2.0}, {"dlw", 2.2}, {"ate_dlw", 2.5}}));
    oc.reps.push_back(fake_rep(3, 2.0, {{"base", 3.0}, {"dlw", 2.0}, {"ate_dlw", 2.5}}));
    const CellKey key{2, 8, 5000, 0.2};
    const auto rows = aggregate_cell(key, {"base", "dlw", "ate_dlw"}, oc);
    ASSERT_EQ(rows.size(), 3u);
    // base errors .5, 1.5, 0, 1
    EXPECT_NEAR(rows[0].bias, 0.75, 1e-12);
    EXPECT_NEAR(rows[0].rmse, std::sqrt((0.25 + 2.25 + 0.0 + 1.0) / 4.0), 1e-12);
    // dlw errors 0, -.2, .2, 0
    EXPECT_NEAR(rows[1].bias, 0.0, 1e-12);
    EXPECT_NEAR(rows[1].rmse, std::sqrt(0.02), 1e-12);
    // ate_dlw is scored against the ATE (truth + .5): errors .5, 0, 0, 0
    EXPECT_NEAR(rows[2].bias, 0.125, 1e-12);
    EXPECT_NEAR(rows[2].mean_ess, 6.5, 1e-12);
    EXPECT_EQ(rows[0].reps, 4u);
    EXPECT_EQ(rows[0].status, "ok");
}

TEST(Aggregate, FailedReplicationsAreSkipped) {
    CellOutcome oc;
    oc.reps.push_back(fake_rep(0, 1.0, {{"base", 2.0}}));
    ReplicationResult bad;
    bad.index = 1;
    oc.reps.push_back(bad);
    const auto rows = aggregate_cell({1, 2, 100, 0.1}, {"base"}, oc);
    EXPECT_EQ(rows[0].reps, 1u);
    EXPECT_EQ(rows[0].failed, 1u);
    EXPECT_DOUBLE_EQ(rows[0].bias, 1.0);
}

TEST(Aggregate, RmseDominatesAbsoluteBias) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.3, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Accumulator acc;
        for (int k = 0; k < 1 + trial % 7; ++k) acc.add(g(rng), 0.0, 1.0);
        EXPECT_GE(acc.rmse() + 1e-15, std::abs(acc.bias()));
    }
}

TEST(Tables, CsvRoundTripIncludingNan) {
    ResultTable t;
    t.rows.push_back({{2, 8, 5000, 0.2}, "dlw", 10, 0, "ok", 0.1 + 0.2, 1.0 / 3.0, 1234.5});
    t.rows.push_back({{1, 4, 1000, 0.25}, "base", 0, 3, "aborted", std::nan(""), std::nan(""), std::nan("")});
    std::stringstream ss;
    write_summary_csv(ss, t);
    EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), kSummaryHeader);
    EXPECT_EQ(read_summary_csv(ss), t);
}

TEST(Tables, BadSummaryIsRejected) {
    std::stringstream wrong_header("a,b\n");
    EXPECT_THROW(read_summary_csv(wrong_header), ParseError);
    std::stringstream short_row(std::string(kSummaryHeader) + "\n1,2,3\n");
    EXPECT_THROW(read_summary_csv(short_row), ParseError);
}

TEST(Tables, MarkdownHasOneRowPerEstimator) {
    ResultTable t;
    for (auto n : {1000, 5000})
        for (const char* e : {"dlw", "base", "iptw"}) t.rows.push_back({{2, 8, n, 0.2}, e, 10, 0, "ok", 0.1, 0.2, 3.0});
    std::stringstream ss;
    write_summary_markdown(ss, t);
    const std::string md = ss.str();
    // base ranks ahead of iptw and dlw in the wide table
    EXPECT_LT(md.find("| base |"), md.find("| iptw |"));
    EXPECT_LT(md.find("| iptw |"), md.find("| dlw |"));
    std::size_t wide_rows = 0, pos = 0;
    const auto all = md.find("## All cells");
    while ((pos = md.find("\n| ", pos + 1)) != std::string::npos && pos < all) ++wide_rows;
    EXPECT_EQ(wide_rows, 1u + 3u); // header plus estimators
    std::size_t long_rows = 0;
    pos = all;
    while ((pos = md.find("\n| ", pos + 1)) != std::string::npos) ++long_rows;
    EXPECT_EQ(long_rows, 1u + t.rows.size());
}

TEST(Tables, EmitWritesPerCellAndCombined) {
    const auto dir = scratch("emit");
    ResultTable t;
    t.rows.push_back({{2, 8, 5000, 0.2}, "dlw", 10, 0, "ok", 0.1, 0.2, 3.0});
    t.rows.push_back({{2, 8, 1000, 0.2}, "dlw", 10, 0, "ok", 0.1, 0.2, 3.0});
    const auto files = emit_tables(t, TableFormat::csv, dir);
    ASSERT_EQ(files.size(), 3u);
    EXPECT_EQ(load_summary_csv(files.back().string()), t);
    EXPECT_EQ(load_summary_csv((dir / "cell_2_8_5000_0.2" / "summary.csv").string()).rows.size(), 1u);
    EXPECT_THROW(emit_tables(ResultTable{}, TableFormat::csv, dir), InvalidArgument);
}

TEST(Convergence, RoundTripAndEmptyLog) {
    const auto dir = scratch("conv");
    const std::vector<flow::EpochRecord> log{{0, 3.0, 3.1}, {1, 2.5, 2.9}, {2, 2.25, 2.95}};
    emit_convergence(log, dir / "c.csv");
    const auto back = load_convergence((dir / "c.csv").string());
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back[1].epoch, 1u);
    EXPECT_EQ(back[2].val_nll, 2.95);
    EXPECT_THROW(emit_convergence(std::vector<flow::EpochRecord>{}, dir / "e.csv"), InvalidArgument);
    flow::FlowArchitecture a;
    a.dim = 2;
    EXPECT_THROW(emit_convergence(flow::FlowModel(a, 1), dir / "m.csv"), InvalidArgument);
}

TEST(Seeds, StreamsAreDistinctAndStable) {
    EXPECT_NE(derive_seed(0, 1), derive_seed(0, 2));
    EXPECT_NE(derive_seed(0, 1), derive_seed(1, 1));
    EXPECT_EQ(derive_seed(42, 3), derive_seed(42, 3));
}

TEST(Replication, IndependentOfOtherReplications) {
    auto cfg = tiny_config(scratch("indep"));
    const auto cell = cfg.cells().front();
    const auto a = run_replication(cell, cfg, 2);
    cfg.reps = 10;
    (void)run_replication(cell, cfg, 0);
    const auto b = run_replication(cell, cfg, 2);
    ASSERT_TRUE(a.ok) << a.error;
    ASSERT_EQ(a.reports.size(), b.reports.size());
    for (std::size_t k = 0; k < a.reports.size(); ++k) EXPECT_EQ(a.reports[k].att_hat, b.reports[k].att_hat);
    EXPECT_EQ(a.seed, 9u);
}

TEST(Experiment, RerunIsByteIdentical) {
    const auto d1 = scratch("det1"), d2 = scratch("det2");
    auto c1 = tiny_config(d1);
    auto c2 = tiny_config(d2);
    const auto t1 = run_experiment(c1, nullptr);
    const auto t2 = run_experiment(c2, nullptr);
    EXPECT_EQ(t1, t2);
    EXPECT_EQ(slurp(d1 / "summary.csv"), slurp(d2 / "summary.csv"));
    EXPECT_FALSE(slurp(d1 / "summary.md").empty());
    const auto cell = d1 / "cell_2_2_400_0.3";
    EXPECT_TRUE(fs::exists(cell / "rep_0_estimates.csv"));
    EXPECT_TRUE(fs::exists(cell / "rep_2_nll_treated.csv"));
    EXPECT_TRUE(fs::exists(cell / "rep_1_nll_control.csv"));
    EXPECT_FALSE(any_aborted(t1));
}

TEST(Experiment, CellAbortsWhenTooManyReplicationsFail) {
    // n = 40 at d = 4 leaves fewer than 10 d rows per group, so every flow fit fails
    auto cfg = tiny_config(scratch("abort"));
    cfg.grid.d = {4};
    cfg.grid.n = {40};
    cfg.reps = 5;
    const auto t = run_experiment(cfg, nullptr);
    EXPECT_TRUE(any_aborted(t));
    for (const auto& r : t.rows) {
        EXPECT_EQ(r.status, "aborted");
        EXPECT_TRUE(std::isnan(r.bias));
        EXPECT_EQ(r.failed, 2u); // floor(0.2 * 5) = 1 allowed; the second stops dispatch
    }
    EXPECT_TRUE(fs::exists(fs::path(cfg.output_dir) / "cell_2_4_40_0.3" / "rep_0_failure.txt"));
}

TEST(Config, ParsesAndRejectsUnknownKeys) {
    const auto j = nlohmann::json::parse(R"({
        "grid": {"settings": [1, 2], "d": [2, 4], "n": [500], "s_c": [0.1]},
        "reps": 4, "estimators": ["base", "dlw"], "fit": {"layers": 3, "kind": "neural"}
    })");
    const auto cfg = config_from_json(j);
    EXPECT_EQ(cfg.cells().size(), 4u);
    EXPECT_EQ(cfg.fit.layers, 3);
    EXPECT_EQ(cfg.fit.kind, flow::TransformerKind::neural);
    EXPECT_EQ(cfg.fit.lr, 1e-4);

    auto bad = j;
    bad["fit"]["learning_rate"] = 0.1;
    EXPECT_THROW(config_from_json(bad), InvalidArgument);
    bad = j;
    bad["estimators"] = {"base", "magic"};
    EXPECT_THROW(config_from_json(bad), InvalidArgument);
    bad = j;
    bad.erase("reps");
    EXPECT_THROW(config_from_json(bad), InvalidArgument);
}

TEST(Config, FitOnlyFile) {
    const auto dir = scratch("fitcfg");
    fs::create_directories(dir);
    std::ofstream(dir / "f.json") << R"({"hidden_units": 16, "patience": 5})";
    const auto fc = load_fit_config((dir / "f.json").string());
    EXPECT_EQ(fc.hidden_units, 16);
    EXPECT_EQ(fc.patience, 5u);
    EXPECT_THROW(load_fit_config((dir / "missing.json").string()), IoError);
}

TEST(Verify, BuiltInSuitePasses) {
    for (const auto& c : run_verify_suite()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Format, ShortestRoundTrip) {
    EXPECT_EQ(format_real(0.2), "0.2");
    EXPECT_EQ(std::stod(format_real(0.1 + 0.2)), 0.1 + 0.2);
    EXPECT_EQ(format_real(std::nan("")), "nan");
}
