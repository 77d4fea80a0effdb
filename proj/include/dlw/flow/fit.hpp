#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "dlw/error.hpp"
#include "dlw/flow/flow_model.hpp"
#include "dlw/numerics/adam.hpp"

namespace dlw::flow {

/// Maximum-likelihood training settings. Defaults follow the synthetic-data
/// hyperparameters (K=6, 2x64 conditioner, batch 128, lr 1e-4).
struct FitConfig {
    Eigen::Index layers = 6;
    Eigen::Index hidden_layers = 2;
    Eigen::Index hidden_units = 64;
    TransformerKind kind = TransformerKind::affine;
    Eigen::Index neural_units = 8;
    std::size_t batch_size = 128;
    double lr = 1e-4;
    std::size_t max_epochs = 500;
    std::size_t patience = 20;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;

    FlowArchitecture architecture(Eigen::Index dim) const {
        return {dim, layers, hidden_layers, hidden_units, kind, neural_units};
    }

    void validate() const {
        if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw InvalidArgument("val_fraction must lie in (0, 1)");
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("lr must be finite and non-negative");
        if (max_epochs < 1) throw InvalidArgument("max_epochs must be at least 1");
    }
};

namespace detail {

inline Matrix gather_rows(const Matrix& X, std::span<const std::size_t> idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
    return out;
}

} // namespace detail

/// Mean negative log-likelihood of `X` under `model`.
inline double mean_nll(const FlowModel& model, const Matrix& X) {
    return -model.log_prob(X).mean();
}

/// Fits a flow to the rows of `data` by minibatch Adam on the mean NLL with
/// early stopping on a held-out split. Returns the parameters at the best
/// validation epoch; the per-epoch log covers every epoch that ran.
inline FlowModel fit(const Matrix& data, const FitConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = data.rows();
    const Eigen::Index d = data.cols();
    if (d < 1) throw InvalidArgument("fit needs at least one covariate column");
    if (n < 10 * d) {
        throw InvalidArgument("fit needs n >= 10*d samples (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");
    }
    if (!data.allFinite()) throw NonFiniteError("input", "training data must be finite");

    std::mt19937_64 rng(cfg.seed);
    FlowModel model(cfg.architecture(d), cfg.seed);

    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, static_cast<std::size_t>(n) - 1);
    const Matrix val = detail::gather_rows(data, std::span(order).first(n_val));
    const Matrix train = detail::gather_rows(data, std::span(order).subspan(n_val));
    const auto n_train = static_cast<std::size_t>(train.rows());

    auto adam = numerics::AdamState::for_params(model.params(), cfg.lr);
    std::vector<double> best_values(model.params().values().begin(), model.params().values().end());
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t stale = 0;
    std::vector<EpochRecord> log;

    std::vector<std::size_t> perm(n_train);
    std::iota(perm.begin(), perm.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), rng);
        double loss_sum = 0.0;
        try {
            for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
                const std::size_t len = std::min(cfg.batch_size, n_train - start);
                Tape tape(model.params());
                const NodeId x = tape.input(detail::gather_rows(train, std::span(perm).subspan(start, len)));
                const NodeId loss = tape.scale(tape.mean(model.log_prob_node(tape, x)), -1.0);
                const double value = tape.value(loss)(0, 0);
                if (!std::isfinite(value)) throw NonFiniteError("loss", "minibatch NLL");
                loss_sum += value * static_cast<double>(len);
                const auto grads = tape.backward(loss);
                numerics::adam_step(model.params(), grads, adam);
            }
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("epoch " + std::to_string(epoch), e.what());
        }
        const double train_nll = loss_sum / static_cast<double>(n_train);
        double val_nll = 0.0;
        try {
            val_nll = mean_nll(model, val);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("epoch " + std::to_string(epoch), e.what());
        }
        if (!std::isfinite(val_nll)) {
            throw NonFiniteError("epoch " + std::to_string(epoch), "validation NLL diverged");
        }
        log.push_back({epoch, train_nll, val_nll});

        if (val_nll < best_val) {
            best_val = val_nll;
            best_epoch = epoch;
            stale = 0;
            std::copy(model.params().values().begin(), model.params().values().end(), best_values.begin());
        } else if (++stale >= cfg.patience) {
            break;
        }
    }

    std::copy(best_values.begin(), best_values.end(), model.params().values().begin());
    model.train_log() = std::move(log);
    model.set_best_epoch(best_epoch);
    return model;
}

} // namespace dlw::flow
