#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlw/error.hpp"
#include "dlw/numerics/param_store.hpp"

namespace dlw::data {

using numerics::Matrix;
using numerics::Vector;

struct DatasetMeta {
    int setting = 0; // 0 = not synthetic
    double s_c = 0.0;
    std::uint64_t seed = 0;
    Vector raw_means;
    Vector raw_stds;
};

/// Observational sample. X holds standardized covariates; y0/y1 are oracle
/// potential outcomes used only for evaluation.
struct Dataset {
    Matrix X;
    std::vector<int> W;
    Vector y_obs;
    std::optional<Vector> y0;
    std::optional<Vector> y1;
    std::optional<double> true_att;
    DatasetMeta meta;

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index d() const { return X.cols(); }

    std::vector<std::size_t> indices_of(int group) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < W.size(); ++i)
            if (W[i] == group) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> treated() const { return indices_of(1); }
    std::vector<std::size_t> controls() const { return indices_of(0); }

    Matrix rows(const std::vector<std::size_t>& idx) const {
        Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
        return out;
    }
    Matrix group_covariates(int group) const { return rows(indices_of(group)); }

    /// Checks shapes, binary W and y_obs/potential-outcome consistency.
    void validate() const {
        const auto n_rows = static_cast<std::size_t>(X.rows());
        if (W.size() != n_rows || static_cast<std::size_t>(y_obs.size()) != n_rows) {
            throw DimensionError("dataset", "X, W and y_obs must have the same number of rows");
        }
        for (int w : W)
            if (w != 0 && w != 1) throw InvalidArgument("treatment indicator must be 0 or 1");
        if (y0.has_value() != y1.has_value()) throw InvalidArgument("potential outcomes must come as a pair");
        if (y0) {
            if (static_cast<std::size_t>(y0->size()) != n_rows || static_cast<std::size_t>(y1->size()) != n_rows) {
                throw DimensionError("dataset", "potential outcome length mismatch");
            }
            for (std::size_t i = 0; i < n_rows; ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                const double expect = W[i] == 1 ? (*y1)(r) : (*y0)(r);
                if (y_obs(r) != expect) {
                    throw InvalidArgument("y_obs disagrees with potential outcomes at row " + std::to_string(i));
                }
            }
        }
    }
};

/// mean(y1 - y0) over treated units.
inline double att_from_potential_outcomes(const Vector& y0, const Vector& y1, const std::vector<int>& W) {
    double s = 0.0;
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < W.size(); ++i) {
        if (W[i] != 1) continue;
        s += y1(static_cast<Eigen::Index>(i)) - y0(static_cast<Eigen::Index>(i));
        ++n1;
    }
    if (n1 == 0) throw InvalidArgument("no treated units");
    return s / static_cast<double>(n1);
}

/// Column-wise pooled standardization (population std). Returns (means, stds).
/// Constant columns are centered but left unscaled.
inline std::pair<Vector, Vector> standardize(Matrix& X) {
    const auto n = static_cast<double>(X.rows());
    if (X.rows() == 0) throw InvalidArgument("cannot standardize an empty matrix");
    Vector mean = X.colwise().mean().transpose();
    Vector sd(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        X.col(j).array() -= mean(j);
        const double var = X.col(j).squaredNorm() / n;
        sd(j) = std::sqrt(var);
        if (sd(j) > 0.0) X.col(j) /= sd(j);
    }
    return {mean, sd};
}

/// Assembles a dataset from raw covariates, an assignment and potential outcomes.
/// Covariates are standardized in place of the copy held by the dataset.
inline Dataset from_potential_outcomes(Matrix X_raw, std::vector<int> W, Vector y0, Vector y1) {
    Dataset ds;
    auto [mean, sd] = standardize(X_raw);
    ds.X = std::move(X_raw);
    ds.meta.raw_means = std::move(mean);
    ds.meta.raw_stds = std::move(sd);
    ds.y_obs.resize(static_cast<Eigen::Index>(W.size()));
    for (std::size_t i = 0; i < W.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        ds.y_obs(r) = W[i] == 1 ? y1(r) : y0(r);
    }
    ds.W = std::move(W);
    ds.y0 = std::move(y0);
    ds.y1 = std::move(y1);
    ds.validate();
    ds.true_att = att_from_potential_outcomes(*ds.y0, *ds.y1, ds.W);
    return ds;
}

} // namespace dlw::data
