#pragma once

// Define-by-run reverse-mode differentiation over row-major batch matrices.
// Every node value is a (batch x features) matrix; scalars are 1 x 1.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dlw/error.hpp"
#include "dlw/numerics/param_store.hpp"

namespace dlw::numerics {

struct NodeId {
    std::size_t index = 0;
    friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind {
    Input,
    Param,
    MaskedLinear,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Exp,
    Tanh,
    Square,
    LogSigmoid,
    Clamp,
    SliceCols,
    RepeatCols,
    PermuteCols,
    GroupLogSumExp,
    GroupLogSoftmax,
    RowSum,
    Mean,
};

inline std::string shape_of(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Numerically stable log(sigmoid(t)).
inline double log_sigmoid(double t) {
    return t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

class Tape {
public:
    explicit Tape(const ParamStore& params) : params_(&params) {}

    const ParamStore& params() const { return *params_; }
    std::size_t size() const { return nodes_.size(); }
    const Matrix& value(NodeId id) const { return nodes_.at(id.index).value; }
    OpKind kind(NodeId id) const { return nodes_.at(id.index).op; }

    /// Constant leaf (data); receives no gradient.
    NodeId input(Matrix value) {
        Node n;
        n.op = OpKind::Input;
        n.value = std::move(value);
        return push(std::move(n));
    }

    NodeId param(ParamId id) {
        Node n;
        n.op = OpKind::Param;
        n.param = id;
        n.value = params_->view(id);
        return push(std::move(n));
    }

    /// out = x * (W .* mask)^T + b, with x: B x n, W and mask: m x n, b: 1 x m.
    NodeId masked_linear(NodeId x, ParamId weight, std::shared_ptr<const Matrix> mask, ParamId bias) {
        const Matrix& in = value(x);
        const auto w = params_->view(weight);
        const auto b = params_->view(bias);
        const std::string& wname = params_->entry(weight).name;
        if (!mask) throw DimensionError(wname, "null mask");
        if (mask->rows() != w.rows() || mask->cols() != w.cols()) {
            throw DimensionError(wname, "mask is " + shape_of(*mask) + ", weight is " +
                                            std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
        }
        if (in.cols() != w.cols()) {
            throw DimensionError(wname, "input has " + std::to_string(in.cols()) + " columns, weight expects " +
                                            std::to_string(w.cols()));
        }
        if (b.rows() != 1 || b.cols() != w.rows()) {
            throw DimensionError(params_->entry(bias).name,
                                 "bias must be 1x" + std::to_string(w.rows()));
        }
        Node n;
        n.op = OpKind::MaskedLinear;
        n.in = {x, {}, {}};
        n.arity = 1;
        n.param = weight;
        n.param2 = bias;
        n.mask = std::move(mask);
        n.aux = w.cwiseProduct(*n.mask);
        n.value = in * n.aux.transpose();
        n.value.rowwise() += b.row(0);
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) { return binary(OpKind::Add, a, b, "add"); }
    NodeId sub(NodeId a, NodeId b) { return binary(OpKind::Sub, a, b, "sub"); }
    NodeId mul(NodeId a, NodeId b) { return binary(OpKind::Mul, a, b, "mul"); }

    NodeId scale(NodeId a, double c) {
        Node n = unary_node(OpKind::Scale, a);
        n.c0 = c;
        n.value = value(a) * c;
        return push(std::move(n));
    }

    NodeId add_scalar(NodeId a, double c) {
        Node n = unary_node(OpKind::AddScalar, a);
        n.c0 = c;
        n.value = value(a).array() + c;
        return push(std::move(n));
    }

    NodeId exp(NodeId a) {
        Node n = unary_node(OpKind::Exp, a);
        n.value = value(a).array().exp();
        return push(std::move(n));
    }

    NodeId tanh(NodeId a) {
        Node n = unary_node(OpKind::Tanh, a);
        n.value = value(a).array().tanh();
        return push(std::move(n));
    }

    NodeId square(NodeId a) {
        Node n = unary_node(OpKind::Square, a);
        n.value = value(a).array().square();
        return push(std::move(n));
    }

    NodeId log_sigmoid(NodeId a) {
        Node n = unary_node(OpKind::LogSigmoid, a);
        n.value = value(a).unaryExpr([](double t) { return numerics::log_sigmoid(t); });
        return push(std::move(n));
    }

    /// Elementwise clamp to [lo, hi]; zero gradient where clamped.
    NodeId clamp(NodeId a, double lo, double hi) {
        Node n = unary_node(OpKind::Clamp, a);
        n.c0 = lo;
        n.c1 = hi;
        n.value = value(a).cwiseMax(lo).cwiseMin(hi);
        return push(std::move(n));
    }

    NodeId slice_cols(NodeId a, Eigen::Index start, Eigen::Index count) {
        const Matrix& v = value(a);
        if (start < 0 || count < 0 || start + count > v.cols()) {
            throw DimensionError("slice_cols", "columns [" + std::to_string(start) + ", " +
                                                   std::to_string(start + count) + ") of " + shape_of(v));
        }
        Node n = unary_node(OpKind::SliceCols, a);
        n.k0 = start;
        n.k1 = count;
        n.value = v.middleCols(start, count);
        return push(std::move(n));
    }

    /// Column j of the input becomes columns [j*times, (j+1)*times) of the output.
    NodeId repeat_cols(NodeId a, Eigen::Index times) {
        const Matrix& v = value(a);
        if (times < 1) throw DimensionError("repeat_cols", "repeat count must be positive");
        Node n = unary_node(OpKind::RepeatCols, a);
        n.k0 = times;
        n.value.resize(v.rows(), v.cols() * times);
        for (Eigen::Index j = 0; j < v.cols(); ++j)
            for (Eigen::Index t = 0; t < times; ++t) n.value.col(j * times + t) = v.col(j);
        return push(std::move(n));
    }

    /// out.col(j) = a.col(perm[j]).
    NodeId permute_cols(NodeId a, const std::vector<Eigen::Index>& perm) {
        const Matrix& v = value(a);
        if (static_cast<Eigen::Index>(perm.size()) != v.cols()) {
            throw DimensionError("permute_cols", "permutation of length " + std::to_string(perm.size()) +
                                                     " applied to " + shape_of(v));
        }
        Node n = unary_node(OpKind::PermuteCols, a);
        n.perm = perm;
        n.value.resize(v.rows(), v.cols());
        for (std::size_t j = 0; j < perm.size(); ++j) n.value.col(static_cast<Eigen::Index>(j)) = v.col(perm[j]);
        return push(std::move(n));
    }

    /// log-sum-exp over consecutive column groups of width `group`.
    NodeId group_logsumexp(NodeId a, Eigen::Index group) {
        const Matrix& v = value(a);
        check_group(v, group, "group_logsumexp");
        Node n = unary_node(OpKind::GroupLogSumExp, a);
        n.k0 = group;
        const Eigen::Index groups = v.cols() / group;
        n.value.resize(v.rows(), groups);
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            for (Eigen::Index g = 0; g < groups; ++g) {
                auto seg = v.row(r).segment(g * group, group);
                const double mx = seg.maxCoeff();
                n.value(r, g) = mx + std::log((seg.array() - mx).exp().sum());
            }
        }
        return push(std::move(n));
    }

    /// log-softmax within consecutive column groups of width `group`.
    NodeId group_log_softmax(NodeId a, Eigen::Index group) {
        const Matrix& v = value(a);
        check_group(v, group, "group_log_softmax");
        Node n = unary_node(OpKind::GroupLogSoftmax, a);
        n.k0 = group;
        n.value.resize(v.rows(), v.cols());
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
            for (Eigen::Index g = 0; g < v.cols() / group; ++g) {
                auto seg = v.row(r).segment(g * group, group);
                const double mx = seg.maxCoeff();
                const double lse = mx + std::log((seg.array() - mx).exp().sum());
                n.value.row(r).segment(g * group, group) = seg.array() - lse;
            }
        }
        return push(std::move(n));
    }

    NodeId row_sum(NodeId a) {
        Node n = unary_node(OpKind::RowSum, a);
        n.value = value(a).rowwise().sum();
        return push(std::move(n));
    }

    /// Mean over all entries; result is 1 x 1.
    NodeId mean(NodeId a) {
        const Matrix& v = value(a);
        if (v.size() == 0) throw DimensionError("mean", "empty operand");
        Node n = unary_node(OpKind::Mean, a);
        n.value = Matrix::Constant(1, 1, v.sum() / static_cast<double>(v.size()));
        return push(std::move(n));
    }

    /// Reverse sweep from a scalar node. Returns d loss / d params in ParamStore layout.
    std::vector<double> backward(NodeId loss) const {
        const Node& root = nodes_.at(loss.index);
        if (root.value.rows() != 1 || root.value.cols() != 1) {
            throw DimensionError("loss", "backward needs a 1x1 loss, got " + shape_of(root.value));
        }
        std::vector<double> out(params_->size(), 0.0);
        std::vector<Matrix> grads(loss.index + 1);
        grads[loss.index] = Matrix::Ones(1, 1);

        for (std::size_t i = loss.index + 1; i-- > 0;) {
            if (grads[i].size() == 0) continue;
            const Node& n = nodes_[i];
            const Matrix& g = grads[i];
            switch (n.op) {
            case OpKind::Input:
                break;
            case OpKind::Param:
                scatter(out, n.param, g);
                break;
            case OpKind::MaskedLinear: {
                const Matrix& x = nodes_[n.in[0].index].value;
                accumulate(grads, n.in[0], g * n.aux);
                Matrix gw = (g.transpose() * x).cwiseProduct(*n.mask);
                scatter(out, n.param, gw);
                scatter(out, n.param2, g.colwise().sum());
                break;
            }
            case OpKind::Add:
                accumulate(grads, n.in[0], g);
                accumulate(grads, n.in[1], g);
                break;
            case OpKind::Sub:
                accumulate(grads, n.in[0], g);
                accumulate(grads, n.in[1], -g);
                break;
            case OpKind::Mul:
                accumulate(grads, n.in[0], g.cwiseProduct(nodes_[n.in[1].index].value));
                accumulate(grads, n.in[1], g.cwiseProduct(nodes_[n.in[0].index].value));
                break;
            case OpKind::Scale:
                accumulate(grads, n.in[0], g * n.c0);
                break;
            case OpKind::AddScalar:
                accumulate(grads, n.in[0], g);
                break;
            case OpKind::Exp:
                accumulate(grads, n.in[0], g.cwiseProduct(n.value));
                break;
            case OpKind::Tanh:
                accumulate(grads, n.in[0], (g.array() * (1.0 - n.value.array().square())).matrix());
                break;
            case OpKind::Square:
                accumulate(grads, n.in[0], 2.0 * g.cwiseProduct(nodes_[n.in[0].index].value));
                break;
            case OpKind::LogSigmoid: {
                const Matrix& a = nodes_[n.in[0].index].value;
                accumulate(grads, n.in[0], g.cwiseProduct(a.unaryExpr([](double t) { return sigmoid(-t); })));
                break;
            }
            case OpKind::Clamp: {
                const Matrix& a = nodes_[n.in[0].index].value;
                const double lo = n.c0, hi = n.c1;
                Matrix ga = g;
                for (Eigen::Index r = 0; r < a.rows(); ++r)
                    for (Eigen::Index c = 0; c < a.cols(); ++c)
                        if (a(r, c) < lo || a(r, c) > hi) ga(r, c) = 0.0;
                accumulate(grads, n.in[0], ga);
                break;
            }
            case OpKind::SliceCols: {
                const Matrix& a = nodes_[n.in[0].index].value;
                Matrix ga = Matrix::Zero(a.rows(), a.cols());
                ga.middleCols(n.k0, n.k1) = g;
                accumulate(grads, n.in[0], ga);
                break;
            }
            case OpKind::RepeatCols: {
                const Matrix& a = nodes_[n.in[0].index].value;
                Matrix ga = Matrix::Zero(a.rows(), a.cols());
                for (Eigen::Index j = 0; j < a.cols(); ++j)
                    for (Eigen::Index t = 0; t < n.k0; ++t) ga.col(j) += g.col(j * n.k0 + t);
                accumulate(grads, n.in[0], ga);
                break;
            }
            case OpKind::PermuteCols: {
                Matrix ga(g.rows(), g.cols());
                for (std::size_t j = 0; j < n.perm.size(); ++j)
                    ga.col(n.perm[j]) = g.col(static_cast<Eigen::Index>(j));
                accumulate(grads, n.in[0], ga);
                break;
            }
            case OpKind::GroupLogSumExp: {
                const Matrix& a = nodes_[n.in[0].index].value;
                Matrix ga(a.rows(), a.cols());
                for (Eigen::Index r = 0; r < a.rows(); ++r)
                    for (Eigen::Index c = 0; c < a.cols(); ++c) {
                        const Eigen::Index grp = c / n.k0;
                        ga(r, c) = g(r, grp) * std::exp(a(r, c) - n.value(r, grp));
                    }
                accumulate(grads, n.in[0], ga);
                break;
            }
            case OpKind::GroupLogSoftmax: {
                Matrix ga(g.rows(), g.cols());
                for (Eigen::Index r = 0; r < g.rows(); ++r)
                    for (Eigen::Index grp = 0; grp < g.cols() / n.k0; ++grp) {
                        const double total = g.row(r).segment(grp * n.k0, n.k0).sum();
                        for (Eigen::Index t = 0; t < n.k0; ++t) {
                            const Eigen::Index c = grp * n.k0 + t;
                            ga(r, c) = g(r, c) - std::exp(n.value(r, c)) * total;
                        }
                    }
                accumulate(grads, n.in[0], ga);
                break;
            }
            case OpKind::RowSum: {
                const Matrix& a = nodes_[n.in[0].index].value;
                Matrix ga(a.rows(), a.cols());
                for (Eigen::Index c = 0; c < a.cols(); ++c) ga.col(c) = g.col(0);
                accumulate(grads, n.in[0], ga);
                break;
            }
            case OpKind::Mean: {
                const Matrix& a = nodes_[n.in[0].index].value;
                accumulate(grads, n.in[0],
                           Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
                break;
            }
            }
        }
        return out;
    }

private:
    struct Node {
        OpKind op = OpKind::Input;
        std::array<NodeId, 3> in{};
        int arity = 0;
        Matrix value;
        Matrix aux;
        ParamId param{};
        ParamId param2{};
        std::shared_ptr<const Matrix> mask;
        std::vector<Eigen::Index> perm;
        double c0 = 0.0;
        double c1 = 0.0;
        Eigen::Index k0 = 0;
        Eigen::Index k1 = 0;
    };

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return NodeId{nodes_.size() - 1};
    }

    Node unary_node(OpKind op, NodeId a) const {
        check_id(a);
        Node n;
        n.op = op;
        n.in = {a, {}, {}};
        n.arity = 1;
        return n;
    }

    NodeId binary(OpKind op, NodeId a, NodeId b, const char* name) {
        check_id(a);
        check_id(b);
        const Matrix& va = value(a);
        const Matrix& vb = value(b);
        if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
            throw DimensionError(name, shape_of(va) + " vs " + shape_of(vb));
        }
        Node n;
        n.op = op;
        n.in = {a, b, {}};
        n.arity = 2;
        switch (op) {
        case OpKind::Add: n.value = va + vb; break;
        case OpKind::Sub: n.value = va - vb; break;
        default: n.value = va.cwiseProduct(vb); break;
        }
        return push(std::move(n));
    }

    void check_id(NodeId id) const {
        if (id.index >= nodes_.size()) throw InvalidArgument("node id out of range");
    }

    static void check_group(const Matrix& v, Eigen::Index group, const char* name) {
        if (group < 1 || v.cols() % group != 0) {
            throw DimensionError(name, std::to_string(v.cols()) + " columns not divisible into groups of " +
                                           std::to_string(group));
        }
    }

    static void accumulate(std::vector<Matrix>& grads, NodeId id, const Matrix& g) {
        Matrix& slot = grads[id.index];
        if (slot.size() == 0) {
            slot = g;
        } else {
            slot += g;
        }
    }

    void scatter(std::vector<double>& out, ParamId id, const Matrix& g) const {
        const auto& e = params_->entry(id);
        Eigen::Map<Matrix> dst(out.data() + e.offset, static_cast<Eigen::Index>(e.rows),
                               static_cast<Eigen::Index>(e.cols));
        dst += g;
    }

    const ParamStore* params_;
    std::vector<Node> nodes_;
};

} // namespace dlw::numerics
