#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dlw/data/dgp.hpp"
#include "dlw/estimators/att.hpp"
#include "dlw/estimators/registry.hpp"

using namespace dlw;
using data::Dataset;
using numerics::Matrix;
using numerics::Vector;

namespace {

// 1-D shift: treated x ~ N(mu, 1), controls x ~ N(0, 1); y0 = x^2 + eps, y1 = y0 + 1 + x.
// ATT = 1 + mu, ATE = 1 + p1 mu, r(x) = exp(mu x - mu^2 / 2).
Dataset gaussian_shift(std::size_t n1, std::size_t n0, double mu, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(n1 + n0);
    Dataset ds;
    ds.X.resize(n, 1);
    ds.W.resize(static_cast<std::size_t>(n));
    ds.y_obs.resize(n);
    Vector y0(n), y1(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int w = static_cast<std::size_t>(i) < n1 ? 1 : 0;
        const double x = g(rng) + (w ? mu : 0.0);
        ds.X(i, 0) = x;
        ds.W[static_cast<std::size_t>(i)] = w;
        y0(i) = x * x + 0.5 * g(rng);
        y1(i) = y0(i) + 1.0 + x;
        ds.y_obs(i) = w ? y1(i) : y0(i);
    }
    ds.y0 = y0;
    ds.y1 = y1;
    return ds;
}

estimators::RatioFunction shift_ratio(double mu) {
    return [mu](std::span<const double> x) { return std::exp(mu * x[0] - 0.5 * mu * mu); };
}

Dataset tiny(std::vector<double> y, std::vector<int> W, Matrix X = {}) {
    Dataset ds;
    const auto n = static_cast<Eigen::Index>(y.size());
    if (X.size() == 0) {
        X.resize(n, 1);
        for (Eigen::Index i = 0; i < n; ++i) X(i, 0) = static_cast<double>(i);
    }
    ds.X = X;
    ds.W = std::move(W);
    ds.y_obs = Eigen::Map<Vector>(y.data(), n);
    return ds;
}

flow::FlowModel fresh_flow(Eigen::Index d, std::uint64_t seed) {
    flow::FlowArchitecture a;
    a.dim = d;
    a.layers = 2;
    a.hidden_units = 8;
    return flow::FlowModel(a, seed);
}

} // namespace

TEST(Base, DifferenceOfGroupMeans) {
    const auto ds = tiny({2, 4, 1, 1}, {1, 1, 0, 0});
    const auto r = estimators::att_base(ds);
    EXPECT_DOUBLE_EQ(r.att_hat, 2.0);
    EXPECT_EQ(r.n1, 2u);
    EXPECT_EQ(r.n0, 2u);
    EXPECT_DOUBLE_EQ(r.weights.ess, 2.0);
    EXPECT_DOUBLE_EQ(r.weights.min, 0.5);
}

TEST(Base, NeedsBothGroups) {
    EXPECT_THROW(estimators::att_base(tiny({1, 2}, {1, 1})), InvalidArgument);
    EXPECT_THROW(estimators::att_base(tiny({1, 2}, {0, 0})), InvalidArgument);
}

TEST(Dlw, IdenticalFlowsReduceToBase) {
    const auto ds = gaussian_shift(300, 400, 0.7, 1);
    const auto m = fresh_flow(1, 3);
    const auto r = estimators::att_dlw(ds, m, m);
    EXPECT_NEAR(r.att_hat, estimators::att_base(ds).att_hat, 1e-12);
    EXPECT_NEAR(r.weights.ess, 400.0, 1e-9);
}

TEST(Dlw, SelfNormalizationIgnoresRatioScale) {
    const auto ds = gaussian_shift(200, 300, 0.5, 2);
    const auto r = shift_ratio(0.5);
    const double a = estimators::att_dlw(ds, r).att_hat;
    const double b = estimators::att_dlw(ds, [&](std::span<const double> x) { return 37.0 * r(x); }).att_hat;
    EXPECT_NEAR(a, b, 1e-12);
    const auto w = estimators::ratio_weights(ds, r);
    double s = 0.0;
    for (double v : w.normalized()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Dlw, OutcomeScaleEquivariance) {
    auto ds = gaussian_shift(200, 300, 0.5, 3);
    const auto r = shift_ratio(0.5);
    const double a = estimators::att_dlw(ds, r).att_hat;
    ds.y_obs = (-3.0 * ds.y_obs.array() + 11.0).matrix();
    EXPECT_NEAR(estimators::att_dlw(ds, r).att_hat, -3.0 * a, 1e-10);
}

TEST(Dlw, AnalyticRatioRecoversAtt) {
    const double mu = 1.0;
    const auto ds = gaussian_shift(25000, 25000, mu, 4);
    const auto r = estimators::att_dlw(ds, shift_ratio(mu));
    EXPECT_NEAR(r.att_hat, 1.0 + mu, 0.1);
    // the unweighted contrast carries the E[x^2] gap mu^2
    EXPECT_GT(estimators::att_base(ds).att_hat - (1.0 + mu), 0.5);
}

TEST(AteDlw, AnalyticRatioRecoversAte) {
    const double mu = 1.0;
    const auto ds = gaussian_shift(25000, 25000, mu, 5);
    EXPECT_NEAR(estimators::ate_dlw(ds, shift_ratio(mu)), 1.0 + 0.5 * mu, 0.1);
}

TEST(AteDlw, UnitRatioGivesBase) {
    const auto ds = gaussian_shift(100, 150, 0.3, 6);
    EXPECT_NEAR(estimators::ate_from_log_ratios(ds, Vector::Zero(250)), estimators::att_base(ds).att_hat, 1e-12);
}

TEST(Iptw, TruePropensityMatchesTrueDensityRatio) {
    const double mu = 0.8;
    const auto ds = gaussian_shift(20000, 30000, mu, 7);
    // logit e(x) = log(n1/n0) + log r(x)
    estimators::PropensityModel ps{Vector(2)};
    ps.coefficients << std::log(20000.0 / 30000.0) - 0.5 * mu * mu, mu;
    EXPECT_NEAR(estimators::att_iptw(ds, ps).att_hat, estimators::att_dlw(ds, shift_ratio(mu)).att_hat, 1e-10);
}

TEST(Iptw, ConstantPropensityGivesBase) {
    const auto ds = gaussian_shift(100, 200, 0.4, 8);
    estimators::PropensityModel ps{Vector::Zero(2)};
    EXPECT_NEAR(estimators::att_iptw(ds, ps).att_hat, estimators::att_base(ds).att_hat, 1e-12);
}

TEST(Iptw, OverlapGuardRejectsExtremeScores) {
    const auto ds = gaussian_shift(100, 100, 0.4, 9);
    estimators::PropensityModel ps{Vector(2)};
    ps.coefficients << 0.0, 40.0;
    EXPECT_THROW(estimators::iptw_weights(ds, ps), InvalidArgument);
}

TEST(Propensity, RecoversLogisticCoefficients) {
    const Eigen::Index n = 20000;
    std::mt19937_64 rng(10);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix X(n, 2);
    std::vector<int> W(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = g(rng);
        X(i, 1) = g(rng);
        const double e = numerics::sigmoid(X(i, 0) - X(i, 1));
        W[static_cast<std::size_t>(i)] = u(rng) < e ? 1 : 0;
    }
    const auto ps = estimators::fit_propensity_logistic(X, W);
    EXPECT_NEAR(ps.coefficients(0), 0.0, 0.1);
    EXPECT_NEAR(ps.coefficients(1), 1.0, 0.1);
    EXPECT_NEAR(ps.coefficients(2), -1.0, 0.1);
}

TEST(Propensity, NoSignalGivesFlatSlopes) {
    data::DgpConfig c;
    c.setting = 2;
    c.d = 4;
    c.n = 20000;
    c.s_c = 0.0;
    c.seed = 11;
    const auto ps = estimators::fit_propensity_logistic(data::gen_setting(c));
    for (Eigen::Index j = 1; j < ps.coefficients.size(); ++j) EXPECT_LT(std::abs(ps.coefficients(j)), 0.05);
}

TEST(Propensity, SettingOneSlopesAreMinusConfounding) {
    data::DgpConfig c;
    c.setting = 1;
    c.d = 3;
    c.n = 20000;
    c.s_c = 0.5;
    c.seed = 12;
    const auto ps = estimators::fit_propensity_logistic(data::gen_setting(c));
    for (Eigen::Index j = 1; j < ps.coefficients.size(); ++j) EXPECT_NEAR(ps.coefficients(j), -0.5, 0.06);
}

TEST(Propensity, SeparationIsReported) {
    Matrix X(40, 1);
    std::vector<int> W(40);
    for (int i = 0; i < 40; ++i) {
        X(i, 0) = i - 19.5;
        W[static_cast<std::size_t>(i)] = i >= 20;
    }
    EXPECT_THROW(estimators::fit_propensity_logistic(X, W), InvalidArgument);
}

TEST(DoublyRobust, UniformWeightsZeroModelGivesBase) {
    const auto ds = gaussian_shift(50, 80, 0.3, 13);
    const auto w = estimators::WeightVector(ds.controls(), std::vector<double>(80, 1.0));
    const auto zero = outcome::OutcomeModel::from_ols(Vector::Zero(2));
    EXPECT_NEAR(estimators::att_doubly_robust(ds, w, zero).att_hat, estimators::att_base(ds).att_hat, 1e-12);
}

TEST(DoublyRobust, CorrectOutcomeModelNeedsNoWeights) {
    // y0 = 2 + 3x exactly, so any weights give the same answer
    auto ds = gaussian_shift(300, 300, 1.0, 14);
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        ds.y_obs(i) = 2.0 + 3.0 * ds.X(i, 0) + (ds.W[static_cast<std::size_t>(i)] ? 1.5 : 0.0);
    }
    Vector coef(2);
    coef << 2.0, 3.0;
    const auto h0 = outcome::OutcomeModel::from_ols(coef);
    const auto uniform = estimators::WeightVector(ds.controls(), std::vector<double>(300, 1.0));
    EXPECT_NEAR(estimators::att_doubly_robust(ds, uniform, h0).att_hat, 1.5, 1e-10);
}

TEST(DoublyRobust, UnfittedModelIsRejected) {
    const auto ds = gaussian_shift(20, 20, 0.3, 15);
    const auto w = estimators::WeightVector(ds.controls(), std::vector<double>(20, 1.0));
    EXPECT_THROW(estimators::att_doubly_robust(ds, w, outcome::OutcomeModel{}), InvalidArgument);
}

TEST(Weights, BadWeightsNameTheirUnits) {
    try {
        estimators::WeightVector({3, 7, 9, 12}, {1.0, -1.0, std::nan(""), 0.0});
        FAIL() << "expected WeightError";
    } catch (const WeightError& e) {
        EXPECT_EQ(e.units(), (std::vector<std::size_t>{7, 9, 12}));
    }
}

TEST(Weights, EffectiveSampleSize) {
    const estimators::WeightVector w({0, 1, 2}, {1.0, 1.0, 2.0});
    EXPECT_NEAR(w.ess(), 16.0 / 6.0, 1e-12);
    EXPECT_NEAR(w.max_normalized(), 0.5, 1e-15);
}

TEST(Weights, ClipCapsAtQuantile) {
    const estimators::WeightVector w({0, 1, 2, 3}, {1.0, 2.0, 3.0, 100.0}, 0.75);
    EXPECT_DOUBLE_EQ(w.raw()[3], 3.0);
}

TEST(Ols, RecoversConstantEffectInLinearSetting) {
    data::DgpConfig c;
    c.setting = 1;
    c.d = 4;
    c.n = 5000;
    c.s_c = 0.5;
    c.seed = 16;
    const auto ds = data::gen_setting(c);
    EXPECT_NEAR(estimators::att_ols_regression(ds).att_hat, 1.0, 0.1);
}

TEST(BayesIdentity, AnalyticPairIsExact) {
    Matrix s(500, 1);
    for (Eigen::Index i = 0; i < 500; ++i) s(i, 0) = -4.0 + 8.0 * static_cast<double>(i) / 499.0;
    const double mu = 0.6, p1 = 0.3;
    auto e = [&](std::span<const double> x) {
        return numerics::sigmoid(std::log(p1 / (1 - p1)) + mu * x[0] - 0.5 * mu * mu);
    };
    EXPECT_LT(estimators::verify_bayes_identity(e, shift_ratio(mu), s, p1), 1e-12);
}

TEST(BayesIdentity, IdenticalModelsAtEvenOdds) {
    Matrix s(50, 2);
    s.setRandom();
    const auto m = fresh_flow(2, 17);
    EXPECT_LT(estimators::verify_bayes_identity([](std::span<const double>) { return 0.5; }, m, m, s, 0.5), 1e-15);
}

TEST(Randomized, MonteCarloBiasIsSmall) {
    // W independent of X: base, iptw and ols are all unbiased for the constant effect
    double sb = 0, si = 0, so = 0;
    const int reps = 60;
    for (int k = 0; k < reps; ++k) {
        data::DgpConfig c;
        c.setting = 2;
        c.d = 3;
        c.n = 1000;
        c.s_c = 0.0;
        c.seed = 1000 + static_cast<std::uint64_t>(k);
        const auto ds = data::gen_setting(c);
        sb += estimators::att_base(ds).att_hat - *ds.true_att;
        si += estimators::att_iptw(ds, estimators::fit_propensity_logistic(ds)).att_hat - *ds.true_att;
        so += estimators::att_ols_regression(ds).att_hat - *ds.true_att;
    }
    EXPECT_LT(std::abs(sb / reps), 0.1);
    EXPECT_LT(std::abs(si / reps), 0.1);
    EXPECT_LT(std::abs(so / reps), 0.1);
}

TEST(Registry, RunsRequestedEstimatorsInOrder) {
    data::DgpConfig c;
    c.setting = 1;
    c.d = 2;
    c.n = 400;
    c.s_c = 0.3;
    const auto ds = data::gen_setting(c);
    const auto m = fresh_flow(2, 18);
    estimators::EstimatorInputs in;
    in.model_t = &m;
    in.model_c = &m;
    in.forest.trees = 10;
    const std::vector<std::string> names(estimators::kEstimatorNames.begin(), estimators::kEstimatorNames.end());
    const auto out = estimators::run_estimators(ds, names, in);
    ASSERT_EQ(out.size(), names.size());
    for (std::size_t k = 0; k < out.size(); ++k) EXPECT_EQ(out[k].estimator_name, names[k]);
    EXPECT_NEAR(out[3].att_hat, out[0].att_hat, 1e-12); // dlw with identical flows
    EXPECT_NEAR(out[4].att_hat, out[0].att_hat, 1e-12); // ate_dlw likewise
}

TEST(Registry, UnknownNameAndMissingFlows) {
    const auto ds = tiny({2, 4, 1, 1}, {1, 1, 0, 0});
    EXPECT_THROW(estimators::run_estimators(ds, {"nope"}, {}), InvalidArgument);
    EXPECT_THROW(estimators::run_estimators(ds, {"dlw"}, {}), InvalidArgument);
    EXPECT_NO_THROW(estimators::run_estimators(ds, {"base"}, {}));
}

TEST(Report, CsvRowRoundTripsFullPrecision) {
    estimators::EstimateReport r{"dlw", 3, 0.1 + 0.2, 10, 20, {0.01, 0.2, 12.5}};
    std::ostringstream out;
    estimators::write_csv_row(out, r);
    EXPECT_EQ(out.str().substr(0, 7), "dlw,3,0");
    const auto first = out.str().find(',', 6);
    EXPECT_EQ(std::stod(out.str().substr(6, first - 6)), 0.1 + 0.2);
}
