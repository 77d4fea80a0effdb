#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dlw/error.hpp"
#include "dlw/flow/made.hpp"

namespace dlw::flow {

using numerics::Vector;

enum class TransformerKind { affine, neural };

inline std::string to_string(TransformerKind k) { return k == TransformerKind::affine ? "affine" : "neural"; }

inline TransformerKind transformer_kind_from_string(const std::string& s) {
    if (s == "affine") return TransformerKind::affine;
    if (s == "neural") return TransformerKind::neural;
    throw InvalidArgument("unknown transformer kind '" + s + "' (expected affine or neural)");
}

struct FlowArchitecture {
    Eigen::Index dim = 1;
    Eigen::Index layers = 6;
    Eigen::Index hidden_layers = 2;
    Eigen::Index hidden_units = 64;
    TransformerKind kind = TransformerKind::affine;
    /// Hidden width of the per-coordinate monotone network (neural kind only).
    Eigen::Index neural_units = 8;

    friend bool operator==(const FlowArchitecture&, const FlowArchitecture&) = default;
};

inline constexpr double kLogScaleBound = 7.0;
inline constexpr double kNeuralLogitSpread = 1.0;

struct EpochRecord {
    std::size_t epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;
};

/// One autoregressive layer evaluated in the density direction (data in, latent out).
class FlowLayer {
public:
    struct Output {
        NodeId z;
        NodeId logdet; // B x 1
    };

    FlowLayer() = default;

    FlowLayer(ParamStore& params, Eigen::Index index, const FlowArchitecture& arch)
        : kind_(arch.kind), neural_units_(arch.neural_units) {
        const Eigen::Index d = arch.dim;
        perm_.resize(static_cast<std::size_t>(d));
        for (Eigen::Index j = 0; j < d; ++j) {
            perm_[static_cast<std::size_t>(j)] = (index % 2 == 1) ? d - 1 - j : j;
        }
        std::vector<Eigen::Index> coords;
        if (kind_ == TransformerKind::affine) {
            // [shift_1..shift_d, logscale_1..logscale_d]
            for (int block = 0; block < 2; ++block)
                for (Eigen::Index i = 0; i < d; ++i) coords.push_back(i);
        } else {
            // three blocks (log-slope, bias, mixture logit), each coordinate-major with H entries
            for (int block = 0; block < 3; ++block)
                for (Eigen::Index i = 0; i < d; ++i)
                    for (Eigen::Index h = 0; h < neural_units_; ++h) coords.push_back(i);
        }
        conditioner_ = MadeConditioner(params, "layer" + std::to_string(index), d, arch.hidden_layers,
                                       arch.hidden_units, std::move(coords));
    }

    /// Both kinds start as the identity. Neural mixture logits are spread over
    /// [-kNeuralLogitSpread, kNeuralLogitSpread]; equal slopes and offsets keep x -> x.
    template <class Rng>
    void initialize(ParamStore& params, Rng& rng) const {
        conditioner_.initialize(params, rng);
        if (kind_ != TransformerKind::neural || neural_units_ < 2) return;
        const Eigen::Index d = static_cast<Eigen::Index>(perm_.size());
        const Eigen::Index H = neural_units_;
        auto bias = params.view(conditioner_.biases().back());
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index h = 0; h < H; ++h) {
                const double t = static_cast<double>(h) / static_cast<double>(H - 1);
                bias(0, 2 * d * H + i * H + h) = kNeuralLogitSpread * (2.0 * t - 1.0);
            }
    }

    Output forward(Tape& tape, NodeId x) const {
        const Eigen::Index d = static_cast<Eigen::Index>(perm_.size());
        const NodeId xp = tape.permute_cols(x, perm_);
        const NodeId h = conditioner_.forward(tape, xp);
        if (kind_ == TransformerKind::affine) {
            const NodeId shift = tape.slice_cols(h, 0, d);
            const NodeId logscale = tape.clamp(tape.slice_cols(h, d, d), -kLogScaleBound, kLogScaleBound);
            const NodeId z = tape.mul(tape.sub(xp, shift), tape.exp(tape.scale(logscale, -1.0)));
            return {z, tape.scale(tape.row_sum(logscale), -1.0)};
        }
        // z_i = logit( sum_j w_j sigmoid(a_j x_i + b_j) ), a_j = exp(.), w = softmax(.)
        const Eigen::Index H = neural_units_;
        const NodeId log_a = tape.clamp(tape.slice_cols(h, 0, d * H), -kLogScaleBound, kLogScaleBound);
        const NodeId b = tape.slice_cols(h, d * H, d * H);
        const NodeId log_w = tape.group_log_softmax(tape.slice_cols(h, 2 * d * H, d * H), H);
        const NodeId t = tape.add(tape.mul(tape.exp(log_a), tape.repeat_cols(xp, H)), b);
        const NodeId ls_pos = tape.log_sigmoid(t);
        const NodeId ls_neg = tape.log_sigmoid(tape.scale(t, -1.0));
        const NodeId log_u = tape.group_logsumexp(tape.add(log_w, ls_pos), H);
        const NodeId log_1mu = tape.group_logsumexp(tape.add(log_w, ls_neg), H);
        const NodeId z = tape.sub(log_u, log_1mu);
        const NodeId log_du = tape.group_logsumexp(tape.add(tape.add(log_w, log_a), tape.add(ls_pos, ls_neg)), H);
        const NodeId log_dz = tape.sub(tape.sub(log_du, log_u), log_1mu);
        return {z, tape.row_sum(log_dz)};
    }

    TransformerKind kind() const { return kind_; }
    const std::vector<Eigen::Index>& permutation() const { return perm_; }
    const MadeConditioner& conditioner() const { return conditioner_; }

private:
    TransformerKind kind_ = TransformerKind::affine;
    Eigen::Index neural_units_ = 8;
    std::vector<Eigen::Index> perm_;
    MadeConditioner conditioner_;
};

/// Stack of K autoregressive layers over a standard-normal base.
class FlowModel {
public:
    struct Pass {
        NodeId z0;
        NodeId logdet; // B x 1
    };

    struct InverseResult {
        Vector z0;
        double logdet = 0.0;
    };

    FlowModel() = default;

    /// Builds the layer stack and applies the identity-at-init parameter scheme.
    explicit FlowModel(const FlowArchitecture& arch, std::uint64_t seed = 0) : FlowModel(arch, seed, true) {}

    /// Layer stack with all parameters zero (used by deserialization).
    static FlowModel uninitialized(const FlowArchitecture& arch) { return FlowModel(arch, 0, false); }

    Eigen::Index dim() const { return arch_.dim; }
    const FlowArchitecture& architecture() const { return arch_; }
    const std::vector<FlowLayer>& layers() const { return layers_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

    const std::vector<EpochRecord>& train_log() const { return train_log_; }
    std::vector<EpochRecord>& train_log() { return train_log_; }
    std::size_t best_epoch() const { return best_epoch_; }
    void set_best_epoch(std::size_t e) { best_epoch_ = e; }

    /// Records the density-direction pass on `tape`. Throws NonFiniteError naming the layer
    /// whose output stops being finite.
    Pass build(Tape& tape, NodeId x) const {
        NodeId z = x;
        NodeId logdet{};
        bool have_logdet = false;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            auto out = layers_[k].forward(tape, z);
            if (!tape.value(out.z).allFinite() || !tape.value(out.logdet).allFinite()) {
                throw NonFiniteError("layer " + std::to_string(k), "inverse pass produced NaN/inf");
            }
            z = out.z;
            logdet = have_logdet ? tape.add(logdet, out.logdet) : out.logdet;
            have_logdet = true;
        }
        if (!have_logdet) {
            logdet = tape.input(Matrix::Zero(tape.value(x).rows(), 1));
        }
        return {z, logdet};
    }

    /// Per-row log density node (B x 1).
    NodeId log_prob_node(Tape& tape, NodeId x) const {
        const Pass p = build(tape, x);
        const double c = -0.5 * static_cast<double>(arch_.dim) * std::log(2.0 * std::numbers::pi);
        const NodeId base = tape.add_scalar(tape.scale(tape.row_sum(tape.square(p.z0)), -0.5), c);
        return tape.add(base, p.logdet);
    }

    /// Row-wise log density of a batch (n x d).
    Vector log_prob(const Matrix& X) const {
        check_input(X);
        Vector out(X.rows());
        constexpr Eigen::Index chunk = 1024;
        for (Eigen::Index start = 0; start < X.rows(); start += chunk) {
            const Eigen::Index len = std::min(chunk, X.rows() - start);
            Tape tape(params_);
            const NodeId x = tape.input(X.middleRows(start, len));
            out.segment(start, len) = tape.value(log_prob_node(tape, x)).col(0);
        }
        return out;
    }

    double log_prob(std::span<const double> x) const {
        return log_prob(row(x))(0);
    }

    InverseResult inverse_pass(std::span<const double> x) const {
        const Matrix X = row(x);
        check_input(X);
        Tape tape(params_);
        const Pass p = build(tape, tape.input(X));
        return {tape.value(p.z0).row(0).transpose(), tape.value(p.logdet)(0, 0)};
    }

    /// log N(z; 0, I) for a d-vector.
    static double standard_normal_logpdf(std::span<const double> z) {
        double s = 0.0;
        for (double v : z) s += v * v;
        return -0.5 * s - 0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
    }

private:
    FlowModel(const FlowArchitecture& arch, std::uint64_t seed, bool init) : arch_(arch), params_(seed) {
        if (arch.dim < 1) throw InvalidArgument("flow dimension must be positive");
        if (arch.layers < 0 || arch.hidden_layers < 0 || arch.hidden_units < 1 || arch.neural_units < 1) {
            throw InvalidArgument("invalid flow architecture");
        }
        for (Eigen::Index k = 0; k < arch.layers; ++k) layers_.emplace_back(params_, k, arch);
        if (init) {
            std::mt19937_64 rng(seed);
            for (const auto& layer : layers_) layer.initialize(params_, rng);
        }
    }

    void check_input(const Matrix& X) const {
        if (X.cols() != arch_.dim) {
            throw DimensionError("x", "expected " + std::to_string(arch_.dim) + " columns, got " +
                                          std::to_string(X.cols()));
        }
        if (!X.allFinite()) throw NonFiniteError("input", "covariates must be finite");
    }

    static Matrix row(std::span<const double> x) {
        Matrix X(1, static_cast<Eigen::Index>(x.size()));
        for (std::size_t j = 0; j < x.size(); ++j) X(0, static_cast<Eigen::Index>(j)) = x[j];
        return X;
    }

    FlowArchitecture arch_;
    ParamStore params_;
    std::vector<FlowLayer> layers_;
    std::vector<EpochRecord> train_log_;
    std::size_t best_epoch_ = 0;
};

/// p_t(x) / p_c(x) computed in log space.
inline double density_ratio(const FlowModel& treated, const FlowModel& control, std::span<const double> x) {
    if (treated.dim() != control.dim()) {
        throw DimensionError("density_ratio", "models disagree on dimension");
    }
    return std::exp(treated.log_prob(x) - control.log_prob(x));
}

} // namespace dlw::flow
