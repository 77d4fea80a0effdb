#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>

#include "dlw/data/dataset.hpp"
#include "dlw/error.hpp"
#include "dlw/numerics/tape.hpp"

namespace dlw::estimators {

using numerics::Matrix;
using numerics::Vector;

/// Logistic model for P(W=1|x); coefficients are (intercept, slopes...).
struct PropensityModel {
    Vector coefficients;

    double linear(std::span<const double> x) const {
        if (static_cast<Eigen::Index>(x.size()) + 1 != coefficients.size()) {
            throw DimensionError("x", "propensity model expects " + std::to_string(coefficients.size() - 1) + " covariates");
        }
        double eta = coefficients(0);
        for (std::size_t j = 0; j < x.size(); ++j) eta += coefficients(static_cast<Eigen::Index>(j) + 1) * x[j];
        return eta;
    }
    double predict(std::span<const double> x) const { return numerics::sigmoid(linear(x)); }

    Vector predict(const Matrix& X) const {
        Vector e(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            e(i) = predict(std::span<const double>(X.row(i).data(), static_cast<std::size_t>(X.cols())));
        }
        return e;
    }
};

inline constexpr double kSeparationBound = 50.0;
inline constexpr double kStepTolerance = 1e-10;

/// Bernoulli maximum likelihood via damped Newton steps.
inline PropensityModel fit_propensity_logistic(const Matrix& X, const std::vector<int>& W) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols() + 1;
    if (static_cast<Eigen::Index>(W.size()) != n) throw DimensionError("W", "length differs from covariate rows");
    if (n <= p) throw InvalidArgument("logistic regression needs more units than coefficients");

    Matrix A(n, p);
    A.col(0).setOnes();
    A.rightCols(p - 1) = X;
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = W[static_cast<std::size_t>(i)];

    {
        Eigen::MatrixXd gram = A.transpose() * A;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-13) {
            throw InvalidArgument("propensity design matrix is rank deficient");
        }
    }

    auto loglik = [&](const Vector& beta) {
        const Vector eta = A * beta;
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            ll += w(i) * numerics::log_sigmoid(eta(i)) + (1.0 - w(i)) * numerics::log_sigmoid(-eta(i));
        }
        return ll;
    };

    Vector beta = Vector::Zero(p);
    double ll = loglik(beta);
    for (int iter = 0; iter < 200; ++iter) {
        const Vector eta = A * beta;
        Vector mu(n), s(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mu(i) = numerics::sigmoid(eta(i));
            s(i) = mu(i) * (1.0 - mu(i));
        }
        const Vector grad = A.transpose() * (w - mu);
        Eigen::MatrixXd info = A.transpose() * s.asDiagonal() * A;
        info.diagonal().array() += 1e-12;
        const Vector step = info.ldlt().solve(grad);
        // under separation the Newton steps never shrink
        if (step.norm() < kStepTolerance * (1.0 + beta.norm())) return {beta};
        double t = 1.0;
        Vector next = beta + step;
        double next_ll = loglik(next);
        while (!(next_ll >= ll - 1e-12 * std::abs(ll)) && t > 1e-10) {
            t *= 0.5;
            next = beta + t * step;
            next_ll = loglik(next);
        }
        if (next.cwiseAbs().maxCoeff() > kSeparationBound) {
            throw InvalidArgument("logistic coefficients diverge beyond |beta| > 50 (perfect or quasi separation)");
        }
        if (!next.allFinite()) throw NonFiniteError("propensity", "non-finite coefficients");
        if ((next - beta).norm() == 0.0) return {beta};
        beta = next;
        ll = next_ll;
    }
    return {beta};
}

inline PropensityModel fit_propensity_logistic(const data::Dataset& ds) { return fit_propensity_logistic(ds.X, ds.W); }

} // namespace dlw::estimators
