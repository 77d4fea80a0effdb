#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dlw/outcome/outcome_model.hpp"

using namespace dlw;
using numerics::Matrix;
using numerics::Vector;

namespace {

Matrix uniform_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
    return X;
}

Vector noise(Eigen::Index n, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sd);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
    return v;
}

} // namespace

TEST(Ols, RecoversExactLinearSurface) {
    const Matrix X = uniform_matrix(50, 1, 1);
    const Vector y = (3.0 + 2.0 * X.col(0).array()).matrix();
    const auto m = outcome::fit_ols(X, y);
    EXPECT_NEAR(m.coefficients()(0), 3.0, 1e-10);
    EXPECT_NEAR(m.coefficients()(1), 2.0, 1e-10);
    const std::vector<double> x{0.25};
    EXPECT_NEAR(m.predict(x), 3.5, 1e-10);
}

TEST(Ols, SlopeWithinSamplingError) {
    const Eigen::Index n = 4000;
    const Matrix X = uniform_matrix(n, 2, 2);
    const Vector y = (1.0 + 0.5 * X.col(0).array() - 2.0 * X.col(1).array()).matrix() + noise(n, 1.0, 3);
    const auto m = outcome::fit_ols(X, y);
    // slope SE = sigma / (sqrt(n) * sd(x)) with sd(x) = 1/sqrt(3)
    const double se = std::sqrt(3.0 / static_cast<double>(n));
    EXPECT_NEAR(m.coefficients()(1), 0.5, 4.0 * se);
    EXPECT_NEAR(m.coefficients()(2), -2.0, 4.0 * se);
}

TEST(Ols, ConstantResponseGivesInterceptOnly) {
    const Matrix X = uniform_matrix(40, 3, 4);
    const auto m = outcome::fit_ols(X, Vector::Constant(40, 7.0));
    EXPECT_NEAR(m.coefficients()(0), 7.0, 1e-9);
    for (Eigen::Index j = 1; j < 4; ++j) EXPECT_NEAR(m.coefficients()(j), 0.0, 1e-9);
}

TEST(Ols, ResidualsAreOrthogonalToDesign) {
    const Eigen::Index n = 500;
    const Matrix X = uniform_matrix(n, 4, 5, -3.0, 3.0);
    Vector y = noise(n, 2.0, 6);
    y.array() += X.col(0).array().square();
    const auto m = outcome::fit_ols(X, y);
    const Vector r = y - m.predict(X);
    const Matrix A = outcome::with_intercept(X);
    EXPECT_LT((A.transpose() * r).cwiseAbs().maxCoeff(), 1e-8 * static_cast<double>(n));
}

TEST(Ols, AffineEquivariance) {
    const Eigen::Index n = 200;
    const Matrix X = uniform_matrix(n, 2, 7);
    const Vector y = X.col(0) - X.col(1) + noise(n, 0.3, 8);
    const auto m1 = outcome::fit_ols(X, y);
    const auto m2 = outcome::fit_ols(X, (2.5 * y.array() - 4.0).matrix());
    const Vector p1 = m1.predict(X), p2 = m2.predict(X);
    EXPECT_LT(((2.5 * p1.array() - 4.0) - p2.array()).abs().maxCoeff(), 1e-9);

    // rescaling a feature by c rescales its slope by 1/c and leaves predictions alone
    Matrix Xs = X;
    Xs.col(1) *= 8.0;
    const auto m3 = outcome::fit_ols(Xs, y);
    EXPECT_NEAR(m3.coefficients()(2), m1.coefficients()(2) / 8.0, 1e-10);
    EXPECT_LT((m3.predict(Xs) - p1).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ols, RankDeficientDesignIsRejected) {
    Matrix X = uniform_matrix(30, 2, 9);
    X.col(1) = 2.0 * X.col(0);
    EXPECT_THROW(outcome::fit_ols(X, noise(30, 1.0, 10)), InvalidArgument);
    EXPECT_THROW(outcome::fit_ols(uniform_matrix(3, 3, 11), noise(3, 1.0, 12)), InvalidArgument);
}

TEST(Forest, ConstantResponse) {
    const Matrix X = uniform_matrix(100, 3, 13);
    outcome::ForestOptions o;
    o.trees = 20;
    const auto m = outcome::fit_forest(X, Vector::Constant(100, -1.5), o);
    EXPECT_LT((m.predict(X).array() + 1.5).abs().maxCoeff(), 1e-12);
}

TEST(Forest, FitsNonlinearSurfaceOutOfSample) {
    auto surface = [](const Matrix& X) {
        return Vector((3.0 * X.col(0).array()).sin() * X.col(1).array());
    };
    const Matrix Xtr = uniform_matrix(5000, 2, 14, -2.0, 2.0);
    const Matrix Xte = uniform_matrix(2000, 2, 15, -2.0, 2.0);
    const Vector ytr = surface(Xtr) + noise(5000, 0.1, 16);
    const Vector yte = surface(Xte);
    outcome::ForestOptions o;
    o.trees = 200;
    o.max_depth = 8;
    o.seed = 17;
    const auto m = outcome::fit_forest(Xtr, ytr, o);
    const Vector pred = m.predict(Xte);
    const double sse = (pred - yte).squaredNorm();
    const double sst = (yte.array() - yte.mean()).matrix().squaredNorm();
    EXPECT_GT(1.0 - sse / sst, 0.7);
}

TEST(Forest, StumpMatchesBruteForceSplit) {
    const Eigen::Index n = 60;
    const Matrix X = uniform_matrix(n, 2, 18);
    const Vector y = (X.col(1).array() > 0.3).cast<double>().matrix() * 4.0 + noise(n, 0.5, 19);

    outcome::ForestOptions o;
    o.trees = 1;
    o.max_depth = 1;
    o.bag_fraction = 1.0;
    o.bootstrap = false;
    const auto m = outcome::fit_forest(X, y, o);
    const auto& root = m.trees().front().nodes.front();

    // mtry is 1 at d = 2: exhaustive SSE minimization over the sampled feature's midpoints
    ASSERT_GE(root.feature, 0);
    const int f = root.feature;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = X(i, f);
    std::sort(v.begin(), v.end());
    double best_sse = INFINITY, best_thr = 0.0;
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
        const double thr = 0.5 * (v[k] + v[k + 1]);
        double sl = 0, sr = 0, ql = 0, qr = 0, nl = 0, nr = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (X(i, f) <= thr) { sl += y(i); ql += y(i) * y(i); ++nl; }
            else { sr += y(i); qr += y(i) * y(i); ++nr; }
        }
        const double sse = ql - sl * sl / nl + qr - sr * sr / nr;
        if (sse < best_sse - 1e-9) { best_sse = sse; best_thr = thr; }
    }
    EXPECT_NEAR(root.threshold, best_thr, 1e-12);
    EXPECT_EQ(m.trees().front().depth(), 1u);
}

TEST(Forest, PredictionsStayInsideResponseRange) {
    const Matrix X = uniform_matrix(300, 2, 20);
    const Vector y = X.col(0).array().exp().matrix() + noise(300, 0.2, 21);
    outcome::ForestOptions o;
    o.trees = 30;
    const auto m = outcome::fit_forest(X, y, o);
    const Vector p = m.predict(uniform_matrix(500, 2, 22, -5.0, 5.0));
    EXPECT_GE(p.minCoeff(), y.minCoeff());
    EXPECT_LE(p.maxCoeff(), y.maxCoeff());
}

TEST(Forest, SameSeedSamePredictions) {
    const Matrix X = uniform_matrix(200, 3, 23);
    const Vector y = noise(200, 1.0, 24) + X.col(2);
    outcome::ForestOptions o;
    o.trees = 10;
    o.seed = 99;
    const Vector a = outcome::fit_forest(X, y, o).predict(X);
    const Vector b = outcome::fit_forest(X, y, o).predict(X);
    EXPECT_EQ(a, b);
    o.seed = 100;
    EXPECT_NE(a, outcome::fit_forest(X, y, o).predict(X));
}

TEST(Forest, InvalidOptions) {
    const Matrix X = uniform_matrix(100, 2, 25);
    outcome::ForestOptions o;
    o.trees = 0;
    EXPECT_THROW(outcome::fit_forest(X, noise(100, 1.0, 26), o), InvalidArgument);
    o.trees = 5;
    EXPECT_THROW(outcome::fit_forest(uniform_matrix(10, 2, 27), noise(10, 1.0, 28), o), InvalidArgument);
}

TEST(OutcomeModel, UnfittedModelRefusesToPredict) {
    outcome::OutcomeModel m;
    const std::vector<double> x{1.0};
    EXPECT_THROW(m.predict(x), InvalidArgument);
}
