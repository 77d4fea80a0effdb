#pragma once

// Synthetic data-generating processes for the three simulation settings and the
// median-threshold confounded assignment used for potential-outcome tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dlw/data/dataset.hpp"
#include "dlw/error.hpp"

namespace dlw::data {

struct DgpConfig {
    int setting = 2;
    Eigen::Index d = 8;
    Eigen::Index n = 5000;
    double s_c = 0.2;
    std::uint64_t seed = 0;

    void validate() const {
        if (setting < 1 || setting > 3) throw InvalidArgument("setting must be 1, 2 or 3");
        if (d < 1) throw InvalidArgument("d must be at least 1");
        if (n < 1) throw InvalidArgument("n must be at least 1");
        if (!(s_c >= 0.0)) throw InvalidArgument("s_c must be non-negative");
    }
};

/// i.i.d. entries from (1/3)N(-3,1) + (1/3)N(0,1) + (1/3)N(3,1). Not standardized.
template <class Rng>
Matrix draw_mixture_covariates(Eigen::Index n, Eigen::Index d, Rng& rng) {
    std::uniform_int_distribution<int> component(0, 2);
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            const double mu = 3.0 * static_cast<double>(component(rng) - 1);
            X(i, j) = mu + noise(rng);
        }
    }
    return X;
}

inline Matrix gen_covariates(const DgpConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    return draw_mixture_covariates(cfg.n, cfg.d, rng);
}

/// Confounding score inside the logistic of each setting: e(x) = 1 / (1 + exp(s_c * score(x))).
inline double confounding_score(int setting, const auto& x) {
    const Eigen::Index d = x.size();
    double main = 0.0;
    double pairs = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double xi = x(i);
        switch (setting) {
        case 1: main += xi; break;
        case 2: main += xi * xi - 1.0; break;
        default: main += std::log(xi * xi + 1.0) - 0.5; break;
        }
        if (setting != 1)
            for (Eigen::Index j = i + 1; j < d; ++j) pairs += xi * x(j);
    }
    return main + pairs;
}

inline double propensity(int setting, double s_c, const auto& x) {
    return 1.0 / (1.0 + std::exp(s_c * confounding_score(setting, x)));
}

/// Outcome surface without the treatment term; pair coefficients are indexed
/// by unordered pair (i<j) in row-major order.
inline double outcome_surface(int setting, const auto& x, const Vector& beta1, const Vector& beta2) {
    const Eigen::Index d = x.size();
    double f = 0.0;
    Eigen::Index p = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double xi = x(i);
        switch (setting) {
        case 1: f += beta1(i) * xi; break;
        case 2: f += beta1(i) * xi * xi; break;
        default: f += beta1(i) * std::log(xi * xi + 1.0); break;
        }
        if (setting == 1) continue;
        for (Eigen::Index j = i + 1; j < d; ++j, ++p) {
            const double xij = xi * x(j);
            f += setting == 2 ? beta2(p) * xij : 2.0 * beta2(p) * std::sin(xij);
        }
    }
    return f;
}

/// Draws one replication: mixture covariates, pooled standardization, fresh
/// coefficients, assignment from the standardized covariates and both potential outcomes.
inline Dataset gen_setting(const DgpConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    Matrix X = draw_mixture_covariates(cfg.n, cfg.d, rng);
    auto [mean, sd] = standardize(X);

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vector beta1(cfg.d);
    for (Eigen::Index j = 0; j < cfg.d; ++j) beta1(j) = unif(rng);
    Vector beta2(cfg.d * (cfg.d - 1) / 2);
    for (Eigen::Index p = 0; p < beta2.size(); ++p) beta2(p) = unif(rng);

    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<int> W(static_cast<std::size_t>(cfg.n));
    Vector y0(cfg.n), y1(cfg.n), y_obs(cfg.n);
    for (Eigen::Index i = 0; i < cfg.n; ++i) {
        const auto x = X.row(i);
        const double e = propensity(cfg.setting, cfg.s_c, x);
        const int w = unif(rng) < e ? 1 : 0;
        const double base = outcome_surface(cfg.setting, x, beta1, beta2) + noise(rng);
        W[static_cast<std::size_t>(i)] = w;
        y0(i) = base;
        y1(i) = base + 1.0;
        y_obs(i) = w == 1 ? y1(i) : y0(i);
    }

    Dataset ds;
    ds.X = std::move(X);
    ds.W = std::move(W);
    ds.y_obs = std::move(y_obs);
    ds.y0 = std::move(y0);
    ds.y1 = std::move(y1);
    ds.meta = {cfg.setting, cfg.s_c, cfg.seed, std::move(mean), std::move(sd)};
    ds.true_att = att_from_potential_outcomes(*ds.y0, *ds.y1, ds.W);
    return ds;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw InvalidArgument("median of empty sample");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

/// log(1 + z^2) + 0.01 * (sum of the other raw covariates), per row.
inline std::vector<double> twins_confounding_term(const Matrix& X_raw, Eigen::Index z_col) {
    if (z_col < 0 || z_col >= X_raw.cols()) throw InvalidArgument("confounder column out of range");
    std::vector<double> conf(static_cast<std::size_t>(X_raw.rows()));
    for (Eigen::Index i = 0; i < X_raw.rows(); ++i) {
        const double z = X_raw(i, z_col);
        const double others = X_raw.row(i).sum() - z;
        conf[static_cast<std::size_t>(i)] = std::log1p(z * z) + 0.01 * others;
    }
    return conf;
}

/// W ~ Bernoulli(0.1) above the median confounding term, Bernoulli(0.9) at or below it.
inline std::vector<int> assign_twins_treatment(const Matrix& X_raw, Eigen::Index z_col, std::uint64_t seed) {
    const auto conf = twins_confounding_term(X_raw, z_col);
    const double med = median(conf);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<int> W(conf.size());
    for (std::size_t i = 0; i < conf.size(); ++i) {
        const double e = conf[i] > med ? 0.1 : 0.9;
        W[i] = unif(rng) < e ? 1 : 0;
    }
    return W;
}

} // namespace dlw::data
