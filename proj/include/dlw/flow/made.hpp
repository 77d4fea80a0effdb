#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dlw/numerics/param_store.hpp"
#include "dlw/numerics/tape.hpp"

namespace dlw::flow {

using numerics::Matrix;
using numerics::NodeId;
using numerics::ParamId;
using numerics::ParamStore;
using numerics::Tape;

/// Masked feed-forward conditioner. Output column c belongs to coordinate
/// `output_coords[c]` and sees only input coordinates strictly before it.
class MadeConditioner {
public:
    MadeConditioner() = default;

    MadeConditioner(ParamStore& params, const std::string& prefix, Eigen::Index dim, Eigen::Index hidden_layers,
                    Eigen::Index hidden_units, std::vector<Eigen::Index> output_coords)
        : dim_(dim), hidden_layers_(hidden_layers), hidden_units_(hidden_units), output_coords_(std::move(output_coords)) {
        if (dim < 1) throw InvalidArgument("conditioner dimension must be positive");
        for (Eigen::Index c : output_coords_) {
            if (c < 0 || c >= dim) throw InvalidArgument("conditioner output coordinate out of range");
        }
        build_masks();
        Eigen::Index fan_in = dim_;
        for (std::size_t l = 0; l < masks_.size(); ++l) {
            const auto rows = masks_[l]->rows();
            const std::string tag = prefix + ".l" + std::to_string(l);
            weights_.push_back(params.add(tag + ".w", static_cast<std::size_t>(rows), static_cast<std::size_t>(fan_in)));
            biases_.push_back(params.add(tag + ".b", 1, static_cast<std::size_t>(rows)));
            fan_in = rows;
        }
    }

    /// Hidden weights ~ U(+-1/sqrt(fan_in)), biases 0, output layer all zero.
    template <class Rng>
    void initialize(ParamStore& params, Rng& rng) const {
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            params.view(biases_[l]).setZero();
            if (l + 1 == weights_.size()) {
                params.view(weights_[l]).setZero();
            } else {
                params.init_uniform_fan_in(weights_[l], rng);
            }
        }
    }

    NodeId forward(Tape& tape, NodeId x) const {
        NodeId h = x;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            h = tape.masked_linear(h, weights_[l], masks_[l], biases_[l]);
            if (l + 1 < weights_.size()) h = tape.tanh(h);
        }
        return h;
    }

    Eigen::Index dim() const { return dim_; }
    Eigen::Index hidden_layers() const { return hidden_layers_; }
    Eigen::Index hidden_units() const { return hidden_units_; }
    Eigen::Index outputs() const { return static_cast<Eigen::Index>(output_coords_.size()); }
    const std::vector<std::shared_ptr<const Matrix>>& masks() const { return masks_; }
    const std::vector<ParamId>& weights() const { return weights_; }
    const std::vector<ParamId>& biases() const { return biases_; }

    /// Degree of hidden unit k: cycles through 1..d-1; 0 when d == 1 (unit sees no input).
    static Eigen::Index hidden_degree(Eigen::Index k, Eigen::Index dim) {
        return dim > 1 ? (k % (dim - 1)) + 1 : 0;
    }

private:
    void build_masks() {
        std::vector<Eigen::Index> prev(static_cast<std::size_t>(dim_));
        for (Eigen::Index j = 0; j < dim_; ++j) prev[static_cast<std::size_t>(j)] = j + 1;

        for (Eigen::Index l = 0; l < hidden_layers_; ++l) {
            std::vector<Eigen::Index> deg(static_cast<std::size_t>(hidden_units_));
            for (Eigen::Index k = 0; k < hidden_units_; ++k) deg[static_cast<std::size_t>(k)] = hidden_degree(k, dim_);
            auto m = std::make_shared<Matrix>(hidden_units_, static_cast<Eigen::Index>(prev.size()));
            for (Eigen::Index r = 0; r < m->rows(); ++r)
                for (Eigen::Index c = 0; c < m->cols(); ++c)
                    (*m)(r, c) = deg[static_cast<std::size_t>(r)] >= prev[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
            masks_.push_back(std::move(m));
            prev = std::move(deg);
        }

        auto out = std::make_shared<Matrix>(outputs(), static_cast<Eigen::Index>(prev.size()));
        for (Eigen::Index r = 0; r < out->rows(); ++r) {
            const Eigen::Index odeg = output_coords_[static_cast<std::size_t>(r)] + 1;
            for (Eigen::Index c = 0; c < out->cols(); ++c) {
                (*out)(r, c) = odeg > prev[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
            }
        }
        masks_.push_back(std::move(out));
    }

    Eigen::Index dim_ = 0;
    Eigen::Index hidden_layers_ = 0;
    Eigen::Index hidden_units_ = 0;
    std::vector<Eigen::Index> output_coords_;
    std::vector<std::shared_ptr<const Matrix>> masks_;
    std::vector<ParamId> weights_;
    std::vector<ParamId> biases_;
};

} // namespace dlw::flow
