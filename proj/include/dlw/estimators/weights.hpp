#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dlw/error.hpp"

namespace dlw::estimators {

/// Self-normalized weights over control units.
class WeightVector {
public:
    WeightVector() = default;

    /// Rejects non-positive or non-finite raw weights, listing the offending unit ids.
    /// With clip_quantile set, raw weights above that quantile are capped (diagnostics only).
    WeightVector(std::vector<std::size_t> unit_ids, std::vector<double> raw,
                 std::optional<double> clip_quantile = std::nullopt)
        : unit_ids_(std::move(unit_ids)), raw_(std::move(raw)) {
        if (unit_ids_.size() != raw_.size()) throw DimensionError("weights", "unit ids and raw weights differ in length");
        if (raw_.empty()) throw InvalidArgument("weight vector needs at least one control unit");
        std::vector<std::size_t> bad;
        for (std::size_t k = 0; k < raw_.size(); ++k)
            if (!std::isfinite(raw_[k]) || !(raw_[k] > 0.0)) bad.push_back(unit_ids_[k]);
        if (!bad.empty()) {
            std::string msg = "non-finite or non-positive weight at control unit(s)";
            for (std::size_t k = 0; k < bad.size() && k < 20; ++k) msg += ' ' + std::to_string(bad[k]);
            if (bad.size() > 20) msg += " ... (" + std::to_string(bad.size()) + " total)";
            throw WeightError(msg, std::move(bad));
        }
        if (clip_quantile) clip(*clip_quantile);
        normalize();
    }

    const std::vector<std::size_t>& unit_ids() const { return unit_ids_; }
    const std::vector<double>& raw() const { return raw_; }
    const std::vector<double>& normalized() const { return normalized_; }
    std::size_t size() const { return raw_.size(); }

    double ess() const {
        double s = 0.0, s2 = 0.0;
        for (double w : raw_) {
            s += w;
            s2 += w * w;
        }
        return s * s / s2;
    }
    double min_normalized() const { return *std::min_element(normalized_.begin(), normalized_.end()); }
    double max_normalized() const { return *std::max_element(normalized_.begin(), normalized_.end()); }

private:
    void clip(double q) {
        if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("clip quantile must lie in (0, 1]");
        std::vector<double> sorted = raw_;
        std::sort(sorted.begin(), sorted.end());
        const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size()))) - 1;
        const double cap = sorted[std::min(k, sorted.size() - 1)];
        for (double& w : raw_) w = std::min(w, cap);
    }

    void normalize() {
        double total = 0.0;
        for (double w : raw_) total += w;
        normalized_.resize(raw_.size());
        for (std::size_t k = 0; k < raw_.size(); ++k) normalized_[k] = raw_[k] / total;
    }

    std::vector<std::size_t> unit_ids_;
    std::vector<double> raw_;
    std::vector<double> normalized_;
};

struct WeightSummary {
    double min = 0.0;
    double max = 0.0;
    double ess = 0.0;
};

struct EstimateReport {
    std::string estimator_name;
    std::size_t replication = 0;
    double att_hat = 0.0;
    std::size_t n1 = 0;
    std::size_t n0 = 0;
    WeightSummary weights;

    static constexpr const char* csv_header = "estimator_name,replication,att_hat,n1,n0,ess,min_w,max_w";
};

inline WeightSummary summarize(const WeightVector& w) { return {w.min_normalized(), w.max_normalized(), w.ess()}; }

/// Uniform weights 1/n0; ESS equals n0.
inline WeightSummary uniform_summary(std::size_t n0) {
    const double w = 1.0 / static_cast<double>(n0);
    return {w, w, static_cast<double>(n0)};
}

inline void write_csv_row(std::ostream& out, const EstimateReport& r) {
    const auto old = out.precision(17);
    out << r.estimator_name << ',' << r.replication << ',' << r.att_hat << ',' << r.n1 << ',' << r.n0 << ','
        << r.weights.ess << ',' << r.weights.min << ',' << r.weights.max << '\n';
    out.precision(old);
}

} // namespace dlw::estimators
