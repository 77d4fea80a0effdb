#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dlw/estimators/att.hpp"

namespace dlw::estimators {

inline constexpr std::array<std::string_view, 9> kEstimatorNames = {
    "base", "ols", "iptw", "dlw", "ate_dlw", "dr_dlw_ols", "dr_dlw_forest", "dr_iptw_ols", "dr_iptw_forest"};

inline bool is_estimator(std::string_view name) {
    return std::find(kEstimatorNames.begin(), kEstimatorNames.end(), name) != kEstimatorNames.end();
}

inline std::size_t estimator_rank(std::string_view name) {
    return static_cast<std::size_t>(std::find(kEstimatorNames.begin(), kEstimatorNames.end(), name) - kEstimatorNames.begin());
}

inline void validate_estimator_names(const std::vector<std::string>& names) {
    if (names.empty()) throw InvalidArgument("at least one estimator is required");
    for (const auto& n : names) {
        if (!is_estimator(n)) {
            std::string known;
            for (auto k : kEstimatorNames) known += (known.empty() ? "" : ", ") + std::string(k);
            throw InvalidArgument("unknown estimator '" + n + "' (known: " + known + ")");
        }
    }
}

inline bool needs_flows(const std::vector<std::string>& names) {
    return std::any_of(names.begin(), names.end(), [](const std::string& n) {
        return n == "dlw" || n == "ate_dlw" || n.starts_with("dr_dlw");
    });
}

struct EstimatorInputs {
    const flow::FlowModel* model_t = nullptr;
    const flow::FlowModel* model_c = nullptr;
    outcome::ForestOptions forest;
    WeightOptions weights;
};

/// Runs the named estimators on one dataset. Shared pieces (weights, propensity,
/// outcome models) are built once and reused across estimators.
inline std::vector<EstimateReport> run_estimators(const Dataset& ds, const std::vector<std::string>& names,
                                                  const EstimatorInputs& in) {
    validate_estimator_names(names);
    if (needs_flows(names) && (in.model_t == nullptr || in.model_c == nullptr)) {
        throw InvalidArgument("density-ratio estimators need both treated and control flows");
    }
    std::optional<WeightVector> w_dlw, w_iptw;
    std::optional<outcome::OutcomeModel> h_ols, h_forest;

    auto dlw_w = [&]() -> const WeightVector& {
        if (!w_dlw) w_dlw = dlw_weights(ds, *in.model_t, *in.model_c, in.weights);
        return *w_dlw;
    };
    auto iptw_w = [&]() -> const WeightVector& {
        if (!w_iptw) w_iptw = iptw_weights(ds, fit_propensity_logistic(ds), in.weights);
        return *w_iptw;
    };
    auto controls_fit = [&](bool forest) -> const outcome::OutcomeModel& {
        auto& slot = forest ? h_forest : h_ols;
        if (!slot) {
            const auto idx = ds.controls();
            const Matrix Xc = ds.rows(idx);
            Vector yc(static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) yc(static_cast<Eigen::Index>(k)) = ds.y_obs(static_cast<Eigen::Index>(idx[k]));
            slot = forest ? outcome::fit_forest(Xc, yc, in.forest) : outcome::fit_ols(Xc, yc);
        }
        return *slot;
    };

    std::vector<EstimateReport> out;
    for (const auto& name : names) {
        EstimateReport r;
        if (name == "base") {
            r = att_base(ds);
        } else if (name == "ols") {
            r = att_ols_regression(ds);
        } else if (name == "iptw") {
            r = att_weighted(name, ds, iptw_w());
        } else if (name == "dlw") {
            r = att_weighted(name, ds, dlw_w());
        } else if (name == "ate_dlw") {
            const auto g = detail::require_groups(ds);
            const double p1 = static_cast<double>(g.treated.size()) / static_cast<double>(ds.n());
            std::vector<double> wc(dlw_w().raw());
            for (double& w : wc) w = (1.0 - p1) + p1 * w;
            r = {name, 0, ate_dlw(ds, *in.model_t, *in.model_c), g.treated.size(), g.controls.size(),
                 summarize(WeightVector(g.controls, std::move(wc)))};
        } else {
            const bool dlw_source = name.starts_with("dr_dlw");
            const bool forest = name.ends_with("forest");
            r = att_doubly_robust(name, ds, dlw_source ? dlw_w() : iptw_w(), controls_fit(forest));
        }
        r.estimator_name = name;
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace dlw::estimators
