#pragma once

// Outcome regressions h0(x) for the doubly-robust estimators: OLS with an
// intercept and a bagged regression forest.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "dlw/error.hpp"
#include "dlw/numerics/param_store.hpp"

namespace dlw::outcome {

using numerics::Matrix;
using numerics::Vector;

inline constexpr double kRidgeJitter = 1e-10;

/// Solves min ||A b - y||^2 via (A^T A + jitter I) b = A^T y.
inline Vector least_squares(const Matrix& A, const Vector& y) {
    if (A.rows() != y.size()) throw DimensionError("least_squares", "design rows differ from response length");
    if (A.rows() <= A.cols()) throw InvalidArgument("least squares needs more rows than columns");
    Eigen::MatrixXd gram = A.transpose() * A;
    gram.diagonal().array() += kRidgeJitter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-10) {
        throw InvalidArgument("design matrix is rank deficient");
    }
    return ldlt.solve(A.transpose() * y);
}

struct RegressionTree {
    struct Node {
        int feature = -1; // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
    };
    std::vector<Node> nodes;

    double predict(std::span<const double> x) const {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const Node& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }

    std::size_t depth() const { return depth_from(0); }

private:
    std::size_t depth_from(int i) const {
        const Node& n = nodes[static_cast<std::size_t>(i)];
        if (n.feature < 0) return 0;
        return 1 + std::max(depth_from(n.left), depth_from(n.right));
    }
};

struct ForestOptions {
    std::size_t trees = 200;
    std::size_t max_depth = 8;
    double bag_fraction = 0.8;
    std::uint64_t seed = 0;
    /// Sample the bag with replacement; otherwise a subsample without replacement.
    bool bootstrap = true;
    std::size_t min_leaf_split = 5;
};

class OutcomeModel {
public:
    enum class Kind { none, ols, forest };

    OutcomeModel() = default;

    static OutcomeModel from_ols(Vector coefficients) {
        OutcomeModel m;
        m.kind_ = Kind::ols;
        m.coef_ = std::move(coefficients);
        return m;
    }

    static OutcomeModel from_forest(std::vector<RegressionTree> trees, ForestOptions opts) {
        OutcomeModel m;
        m.kind_ = Kind::forest;
        m.trees_ = std::move(trees);
        m.forest_opts_ = opts;
        return m;
    }

    Kind kind() const { return kind_; }
    bool fitted() const { return kind_ != Kind::none; }
    const Vector& coefficients() const { return coef_; }
    const std::vector<RegressionTree>& trees() const { return trees_; }
    const ForestOptions& forest_options() const { return forest_opts_; }

    double predict(std::span<const double> x) const {
        switch (kind_) {
        case Kind::ols: {
            if (static_cast<Eigen::Index>(x.size()) + 1 != coef_.size()) {
                throw DimensionError("x", "OLS model expects " + std::to_string(coef_.size() - 1) + " covariates");
            }
            double s = coef_(0);
            for (std::size_t j = 0; j < x.size(); ++j) s += coef_(static_cast<Eigen::Index>(j) + 1) * x[j];
            return s;
        }
        case Kind::forest: {
            double s = 0.0;
            for (const auto& t : trees_) s += t.predict(x);
            return s / static_cast<double>(trees_.size());
        }
        case Kind::none: break;
        }
        throw InvalidArgument("outcome model has not been fitted");
    }

    Vector predict(const Matrix& X) const {
        Vector out(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            out(i) = predict(std::span<const double>(X.row(i).data(), static_cast<std::size_t>(X.cols())));
        }
        return out;
    }

private:
    Kind kind_ = Kind::none;
    Vector coef_;
    std::vector<RegressionTree> trees_;
    ForestOptions forest_opts_;
};

inline Matrix with_intercept(const Matrix& X) {
    Matrix A(X.rows(), X.cols() + 1);
    A.col(0).setOnes();
    A.rightCols(X.cols()) = X;
    return A;
}

/// Least squares with intercept; coefficients are (intercept, slopes...).
inline OutcomeModel fit_ols(const Matrix& X, const Vector& y) {
    if (X.rows() <= X.cols() + 1) throw InvalidArgument("OLS needs n > d + 1");
    return OutcomeModel::from_ols(least_squares(with_intercept(X), y));
}

namespace detail {

class TreeBuilder {
public:
    TreeBuilder(const Matrix& X, const Vector& y, const ForestOptions& opts, std::mt19937_64& rng)
        : X_(X), y_(y), opts_(opts), rng_(rng) {
        const auto d = static_cast<std::size_t>(X.cols());
        mtry_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
        features_.resize(d);
        std::iota(features_.begin(), features_.end(), std::size_t{0});
    }

    RegressionTree build(std::vector<std::size_t> bag) {
        RegressionTree tree;
        grow(tree, bag, 0);
        return tree;
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double gain = 0.0;
    };

    int grow(RegressionTree& tree, std::vector<std::size_t>& idx, std::size_t depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        double sum = 0.0;
        for (auto i : idx) sum += y_(static_cast<Eigen::Index>(i));
        tree.nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(idx.size());

        if (depth >= opts_.max_depth || idx.size() <= opts_.min_leaf_split) return id;
        const Split s = best_split(idx);
        if (s.feature < 0) return id;

        std::vector<std::size_t> left, right;
        for (auto i : idx) {
            (X_(static_cast<Eigen::Index>(i), s.feature) <= s.threshold ? left : right).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();
        const int l = grow(tree, left, depth + 1);
        const int r = grow(tree, right, depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = s.feature;
        node.threshold = s.threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    // Exhaustive scan over sorted values of mtry randomly chosen features.
    Split best_split(const std::vector<std::size_t>& idx) {
        // partial Fisher-Yates for the candidate features
        for (std::size_t k = 0; k < mtry_; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, features_.size() - 1);
            std::swap(features_[k], features_[pick(rng_)]);
        }
        Split best;
        const auto n = static_cast<double>(idx.size());
        double total = 0.0;
        for (auto i : idx) total += y_(static_cast<Eigen::Index>(i));

        std::vector<std::pair<double, double>> pts(idx.size());
        for (std::size_t k = 0; k < mtry_; ++k) {
            const auto f = static_cast<Eigen::Index>(features_[k]);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const auto i = static_cast<Eigen::Index>(idx[r]);
                pts[r] = {X_(i, f), y_(i)};
            }
            std::sort(pts.begin(), pts.end());
            double left_sum = 0.0;
            for (std::size_t r = 0; r + 1 < pts.size(); ++r) {
                left_sum += pts[r].second;
                if (pts[r].first == pts[r + 1].first) continue;
                const double nl = static_cast<double>(r + 1);
                const double nr = n - nl;
                const double right_sum = total - left_sum;
                // SSE reduction up to the constant term sum(y^2) - total^2/n
                const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
                if (gain > best.gain + 1e-12 * std::abs(total * total / n) + 1e-15) {
                    best.gain = gain;
                    best.feature = static_cast<int>(f);
                    best.threshold = 0.5 * (pts[r].first + pts[r + 1].first);
                }
            }
        }
        return best;
    }

    const Matrix& X_;
    const Vector& y_;
    const ForestOptions& opts_;
    std::mt19937_64& rng_;
    std::size_t mtry_ = 1;
    std::vector<std::size_t> features_;
};

} // namespace detail

/// Bagged variance-reduction regression trees; prediction is the mean over trees.
inline OutcomeModel fit_forest(const Matrix& X, const Vector& y, const ForestOptions& opts) {
    if (opts.trees == 0) throw InvalidArgument("forest needs at least one tree");
    if (X.rows() < 20) throw InvalidArgument("forest needs at least 20 samples");
    if (X.rows() != y.size()) throw DimensionError("y", "length differs from covariate rows");
    if (!(opts.bag_fraction > 0.0 && opts.bag_fraction <= 1.0)) throw InvalidArgument("bag_fraction must lie in (0, 1]");

    const auto n = static_cast<std::size_t>(X.rows());
    const auto bag_size = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opts.bag_fraction * static_cast<double>(n))));
    std::vector<RegressionTree> trees;
    trees.reserve(opts.trees);
    for (std::size_t t = 0; t < opts.trees; ++t) {
        std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                          static_cast<std::uint32_t>(t)};
        std::mt19937_64 rng(seq);
        std::vector<std::size_t> bag(bag_size);
        if (opts.bootstrap) {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (auto& b : bag) b = pick(rng);
        } else {
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), std::size_t{0});
            std::shuffle(all.begin(), all.end(), rng);
            std::copy_n(all.begin(), bag_size, bag.begin());
        }
        detail::TreeBuilder builder(X, y, opts, rng);
        trees.push_back(builder.build(std::move(bag)));
    }
    return OutcomeModel::from_forest(std::move(trees), opts);
}

inline OutcomeModel fit_forest(const Matrix& X, const Vector& y, std::size_t trees, std::size_t max_depth,
                               double bag_fraction, std::uint64_t seed) {
    ForestOptions opts;
    opts.trees = trees;
    opts.max_depth = max_depth;
    opts.bag_fraction = bag_fraction;
    opts.seed = seed;
    return fit_forest(X, y, opts);
}

} // namespace dlw::outcome
