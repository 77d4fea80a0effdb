#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlw/data/dataset.hpp"
#include "dlw/error.hpp"
#include "dlw/estimators/propensity.hpp"
#include "dlw/estimators/weights.hpp"
#include "dlw/flow/flow_model.hpp"
#include "dlw/outcome/outcome_model.hpp"

namespace dlw::estimators {

using data::Dataset;

/// Density ratio p(x|W=1)/p(x|W=0) evaluated at a covariate row.
using RatioFunction = std::function<double(std::span<const double>)>;

namespace detail {

inline std::span<const double> row_span(const Matrix& X, Eigen::Index i) {
    return {X.row(i).data(), static_cast<std::size_t>(X.cols())};
}

inline double group_mean(const Vector& y, const std::vector<std::size_t>& idx) {
    double s = 0.0;
    for (auto i : idx) s += y(static_cast<Eigen::Index>(i));
    return s / static_cast<double>(idx.size());
}

inline double weighted_mean(const Vector& y, const WeightVector& w) {
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w.normalized()[k] * y(static_cast<Eigen::Index>(w.unit_ids()[k]));
    return s;
}

struct Groups {
    std::vector<std::size_t> treated;
    std::vector<std::size_t> controls;
};

inline Groups require_groups(const Dataset& ds) {
    Groups g{ds.treated(), ds.controls()};
    if (g.treated.empty()) throw InvalidArgument("no treated units");
    if (g.controls.empty()) throw InvalidArgument("no control units");
    return g;
}

/// log p_t(x) - log p_c(x) for the given rows, batched through both flows.
inline Vector log_ratios(const flow::FlowModel& model_t, const flow::FlowModel& model_c, const Matrix& X) {
    if (model_t.dim() != model_c.dim()) throw DimensionError("model_c", "flow dimensions differ");
    return model_t.log_prob(X) - model_c.log_prob(X);
}

} // namespace detail

struct WeightOptions {
    std::optional<double> clip_quantile; // off by default
};

/// Raw control weights from the two flows' density ratio at each control unit.
inline WeightVector dlw_weights(const Dataset& ds, const flow::FlowModel& model_t, const flow::FlowModel& model_c,
                                const WeightOptions& opts = {}) {
    const auto controls = ds.controls();
    if (controls.empty()) throw InvalidArgument("no control units");
    const Vector lr = detail::log_ratios(model_t, model_c, ds.rows(controls));
    std::vector<double> raw(controls.size());
    for (std::size_t k = 0; k < controls.size(); ++k) raw[k] = std::exp(lr(static_cast<Eigen::Index>(k)));
    return WeightVector(controls, std::move(raw), opts.clip_quantile);
}

inline WeightVector ratio_weights(const Dataset& ds, const RatioFunction& ratio, const WeightOptions& opts = {}) {
    const auto controls = ds.controls();
    if (controls.empty()) throw InvalidArgument("no control units");
    std::vector<double> raw(controls.size());
    for (std::size_t k = 0; k < controls.size(); ++k) {
        raw[k] = ratio(detail::row_span(ds.X, static_cast<Eigen::Index>(controls[k])));
    }
    return WeightVector(controls, std::move(raw), opts.clip_quantile);
}

/// Control odds weights e/(1-e); every unit's fitted score must lie in [1e-6, 1-1e-6].
inline WeightVector iptw_weights(const Dataset& ds, const PropensityModel& ps, const WeightOptions& opts = {}) {
    const Vector e = ps.predict(ds.X);
    std::vector<std::size_t> outside;
    for (Eigen::Index i = 0; i < e.size(); ++i)
        if (!(e(i) >= 1e-6 && e(i) <= 1.0 - 1e-6)) outside.push_back(static_cast<std::size_t>(i));
    if (!outside.empty()) {
        throw InvalidArgument("fitted propensity outside [1e-6, 1-1e-6] for " + std::to_string(outside.size()) +
                              " unit(s), first at row " + std::to_string(outside.front()));
    }
    const auto controls = ds.controls();
    if (controls.empty()) throw InvalidArgument("no control units");
    std::vector<double> raw(controls.size());
    for (std::size_t k = 0; k < controls.size(); ++k) {
        const double ei = e(static_cast<Eigen::Index>(controls[k]));
        raw[k] = ei / (1.0 - ei);
    }
    return WeightVector(controls, std::move(raw), opts.clip_quantile);
}

inline EstimateReport att_base(const Dataset& ds) {
    const auto g = detail::require_groups(ds);
    return {"base", 0, detail::group_mean(ds.y_obs, g.treated) - detail::group_mean(ds.y_obs, g.controls),
            g.treated.size(), g.controls.size(), uniform_summary(g.controls.size())};
}

/// Treated mean minus the self-normalized weighted control mean.
inline EstimateReport att_weighted(const std::string& name, const Dataset& ds, const WeightVector& w) {
    const auto g = detail::require_groups(ds);
    if (w.size() != g.controls.size()) throw DimensionError("weights", "must cover every control unit");
    return {name, 0, detail::group_mean(ds.y_obs, g.treated) - detail::weighted_mean(ds.y_obs, w), g.treated.size(),
            g.controls.size(), summarize(w)};
}

inline EstimateReport att_dlw(const Dataset& ds, const flow::FlowModel& model_t, const flow::FlowModel& model_c,
                              const WeightOptions& opts = {}) {
    return att_weighted("dlw", ds, dlw_weights(ds, model_t, model_c, opts));
}

inline EstimateReport att_dlw(const Dataset& ds, const RatioFunction& ratio, const WeightOptions& opts = {}) {
    return att_weighted("dlw", ds, ratio_weights(ds, ratio, opts));
}

inline EstimateReport att_iptw(const Dataset& ds, const PropensityModel& ps, const WeightOptions& opts = {}) {
    return att_weighted("iptw", ds, iptw_weights(ds, ps, opts));
}

/// Coefficient on W in the pooled regression of y on [1, W, X].
inline EstimateReport att_ols_regression(const Dataset& ds) {
    const auto g = detail::require_groups(ds);
    Matrix A(ds.n(), ds.d() + 2);
    A.col(0).setOnes();
    for (Eigen::Index i = 0; i < ds.n(); ++i) A(i, 1) = ds.W[static_cast<std::size_t>(i)];
    A.rightCols(ds.d()) = ds.X;
    const Vector coef = outcome::least_squares(A, ds.y_obs);
    return {"ols", 0, coef(1), g.treated.size(), g.controls.size(), uniform_summary(g.controls.size())};
}

/// Weighted residual correction of an outcome model fitted on controls.
inline EstimateReport att_doubly_robust(const std::string& name, const Dataset& ds, const WeightVector& w,
                                        const outcome::OutcomeModel& h0) {
    if (!h0.fitted()) throw InvalidArgument("outcome model has not been fitted");
    const auto g = detail::require_groups(ds);
    if (w.size() != g.controls.size()) throw DimensionError("weights", "must cover every control unit");
    double h_treated = 0.0;
    for (auto i : g.treated) h_treated += h0.predict(detail::row_span(ds.X, static_cast<Eigen::Index>(i)));
    h_treated /= static_cast<double>(g.treated.size());
    double correction = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(w.unit_ids()[k]);
        correction += w.normalized()[k] * (ds.y_obs(i) - h0.predict(detail::row_span(ds.X, i)));
    }
    return {name, 0, detail::group_mean(ds.y_obs, g.treated) - (h_treated + correction), g.treated.size(),
            g.controls.size(), summarize(w)};
}

inline EstimateReport att_doubly_robust(const Dataset& ds, const WeightVector& w, const outcome::OutcomeModel& h0) {
    return att_doubly_robust("dr", ds, w, h0);
}

/// ATE from per-unit ratios r(x): treated weights P1 + P0/r, control weights P0 + P1*r,
/// each group self-normalized.
inline double ate_from_log_ratios(const Dataset& ds, const Vector& log_ratio) {
    const auto g = detail::require_groups(ds);
    if (log_ratio.size() != ds.n()) throw DimensionError("log_ratio", "one entry per unit required");
    const double p1 = static_cast<double>(g.treated.size()) / static_cast<double>(ds.n());
    const double p0 = 1.0 - p1;
    std::vector<std::size_t> bad;
    auto weighted = [&](const std::vector<std::size_t>& idx, bool treated) {
        double sw = 0.0, swy = 0.0;
        for (auto i : idx) {
            const double r = std::exp(log_ratio(static_cast<Eigen::Index>(i)));
            const double w = treated ? p1 + p0 / r : p0 + p1 * r;
            if (!std::isfinite(w) || !std::isfinite(r) || !(r > 0.0)) {
                bad.push_back(i);
                continue;
            }
            sw += w;
            swy += w * ds.y_obs(static_cast<Eigen::Index>(i));
        }
        return swy / sw;
    };
    const double m1 = weighted(g.treated, true);
    const double m0 = weighted(g.controls, false);
    if (!bad.empty()) {
        std::string msg = "non-finite density ratio at unit(s)";
        for (std::size_t k = 0; k < bad.size() && k < 20; ++k) msg += ' ' + std::to_string(bad[k]);
        throw WeightError(msg, std::move(bad));
    }
    return m1 - m0;
}

inline double ate_dlw(const Dataset& ds, const flow::FlowModel& model_t, const flow::FlowModel& model_c) {
    return ate_from_log_ratios(ds, detail::log_ratios(model_t, model_c, ds.X));
}

inline double ate_dlw(const Dataset& ds, const RatioFunction& ratio) {
    Vector lr(ds.n());
    for (Eigen::Index i = 0; i < ds.n(); ++i) lr(i) = std::log(ratio(detail::row_span(ds.X, i)));
    return ate_from_log_ratios(ds, lr);
}

/// |ratio(x) / (odds(x) (1-p1)/p1) - 1| per sample row.
inline std::vector<double> bayes_identity_deviations(const std::function<double(std::span<const double>)>& true_e,
                                                     const Vector& log_ratio, const Matrix& sample, double p1) {
    if (!(p1 > 0.0 && p1 < 1.0)) throw InvalidArgument("p1 must lie in (0, 1)");
    if (log_ratio.size() != sample.rows()) throw DimensionError("log_ratio", "one entry per sample row required");
    std::vector<double> dev(static_cast<std::size_t>(sample.rows()));
    for (Eigen::Index i = 0; i < sample.rows(); ++i) {
        const double e = true_e(detail::row_span(sample, i));
        const double log_implied = std::log(e) - std::log1p(-e) + std::log1p(-p1) - std::log(p1);
        dev[static_cast<std::size_t>(i)] = std::abs(std::expm1(log_ratio(i) - log_implied));
    }
    return dev;
}

inline std::vector<double> bayes_identity_deviations(const std::function<double(std::span<const double>)>& true_e,
                                                     const flow::FlowModel& model_t, const flow::FlowModel& model_c,
                                                     const Matrix& sample, double p1) {
    return bayes_identity_deviations(true_e, detail::log_ratios(model_t, model_c, sample), sample, p1);
}

inline double verify_bayes_identity(const std::function<double(std::span<const double>)>& true_e,
                                    const flow::FlowModel& model_t, const flow::FlowModel& model_c,
                                    const Matrix& sample, double p1) {
    const auto dev = bayes_identity_deviations(true_e, model_t, model_c, sample, p1);
    return dev.empty() ? 0.0 : *std::max_element(dev.begin(), dev.end());
}

inline double verify_bayes_identity(const std::function<double(std::span<const double>)>& true_e,
                                    const RatioFunction& ratio, const Matrix& sample, double p1) {
    Vector lr(sample.rows());
    for (Eigen::Index i = 0; i < sample.rows(); ++i) lr(i) = std::log(ratio(detail::row_span(sample, i)));
    const auto dev = bayes_identity_deviations(true_e, lr, sample, p1);
    return dev.empty() ? 0.0 : *std::max_element(dev.begin(), dev.end());
}

} // namespace dlw::estimators
