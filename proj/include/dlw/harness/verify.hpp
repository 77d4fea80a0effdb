#pragma once

// Built-in invariant suite behind `dlw verify`: gradient checks, the identity
// anchor, grid normalization of a randomized flow and the Bayes identity on
// analytic Gaussians.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dlw/estimators/att.hpp"
#include "dlw/flow/fit.hpp"
#include "dlw/flow/flow_model.hpp"

namespace dlw::harness {

using numerics::Matrix;
using numerics::Vector;

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Overwrites every parameter with N(0, scale^2) so no layer is the identity.
inline void randomize_parameters(flow::FlowModel& model, double scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    for (double& v : model.params().values()) v = g(rng);
}

/// Mean NLL gradient from the tape, in parameter-store layout.
inline std::vector<double> nll_gradient(const flow::FlowModel& model, const Matrix& X) {
    numerics::Tape tape(model.params());
    const auto x = tape.input(X);
    const auto loss = tape.scale(tape.mean(model.log_prob_node(tape, x)), -1.0);
    return tape.backward(loss);
}

struct GradientCheck {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Central differences on every parameter; relative error uses max(|a|, |b|, floor).
inline GradientCheck check_gradients(flow::FlowModel& model, const Matrix& X, double step = 1e-5, double floor = 1e-4) {
    const auto grad = nll_gradient(model, X);
    auto values = model.params().values();
    GradientCheck out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + step;
        const double up = flow::mean_nll(model, X);
        values[i] = saved - step;
        const double down = flow::mean_nll(model, X);
        values[i] = saved;
        const double fd = (up - down) / (2.0 * step);
        const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), floor});
        if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst_index = i;
        }
        ++out.checked;
    }
    return out;
}

/// Riemann sum of exp(log_prob) over [-half_width, half_width]^2 with `cells` per axis.
inline double grid_integral_2d(const flow::FlowModel& model, double half_width, Eigen::Index cells) {
    if (model.dim() != 2) throw DimensionError("model", "grid integration needs a 2-D flow");
    const double h = 2.0 * half_width / static_cast<double>(cells);
    Matrix pts(cells * cells, 2);
    for (Eigen::Index a = 0; a < cells; ++a)
        for (Eigen::Index b = 0; b < cells; ++b) {
            pts(a * cells + b, 0) = -half_width + (static_cast<double>(a) + 0.5) * h;
            pts(a * cells + b, 1) = -half_width + (static_cast<double>(b) + 0.5) * h;
        }
    return model.log_prob(pts).array().exp().sum() * h * h;
}

inline std::vector<CheckResult> run_verify_suite() {
    std::vector<CheckResult> out;
    std::mt19937_64 rng(20240611);
    std::normal_distribution<double> g(0.0, 1.0);

    for (auto kind : {flow::TransformerKind::affine, flow::TransformerKind::neural}) {
        flow::FlowArchitecture arch;
        arch.dim = 3;
        arch.layers = 2;
        arch.hidden_units = 8;
        arch.neural_units = 4;
        arch.kind = kind;
        flow::FlowModel model(arch, 1);
        randomize_parameters(model, 0.3, 2);
        Matrix X(16, 3);
        for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
        const auto gc = check_gradients(model, X);
        out.push_back({"gradient/" + flow::to_string(kind), gc.max_rel_error < 1e-4,
                       "max relative error " + std::to_string(gc.max_rel_error) + " over " +
                           std::to_string(gc.checked) + " parameters"});
    }

    {
        flow::FlowArchitecture arch;
        arch.dim = 4;
        flow::FlowModel model(arch, 3);
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            std::vector<double> x(4);
            for (double& v : x) v = 2.0 * g(rng);
            worst = std::max(worst, std::abs(model.log_prob(x) - flow::FlowModel::standard_normal_logpdf(x)));
        }
        out.push_back({"identity-anchor", worst < 1e-12, "max |log p - log N| " + std::to_string(worst)});
    }

    for (auto kind : {flow::TransformerKind::affine, flow::TransformerKind::neural}) {
        flow::FlowArchitecture arch;
        arch.dim = 2;
        arch.layers = 3;
        arch.hidden_units = 16;
        arch.neural_units = 4;
        arch.kind = kind;
        flow::FlowModel model(arch, 4);
        randomize_parameters(model, 0.15, 5);
        const double mass = grid_integral_2d(model, 12.0, 400);
        out.push_back({"normalization/" + flow::to_string(kind), std::abs(mass - 1.0) < 0.02,
                       "grid mass " + std::to_string(mass)});
    }

    {
        // N(1,1) against N(-1,1) with equal priors: ratio exp(2x), e(x) = sigmoid(2x)
        Matrix sample(2000, 1);
        for (Eigen::Index i = 0; i < sample.rows(); ++i) sample(i, 0) = g(rng) + (i % 2 == 0 ? 1.0 : -1.0);
        const double dev = estimators::verify_bayes_identity(
            [](std::span<const double> x) { return numerics::sigmoid(2.0 * x[0]); },
            [](std::span<const double> x) { return std::exp(2.0 * x[0]); }, sample, 0.5);
        out.push_back({"bayes-identity/analytic", dev < 1e-12, "max deviation " + std::to_string(dev)});
    }
    return out;
}

} // namespace dlw::harness
