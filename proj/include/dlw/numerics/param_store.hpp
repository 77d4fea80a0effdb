#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dlw/error.hpp"

namespace dlw::numerics {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Index of a named tensor inside a ParamStore.
struct ParamId {
    std::size_t index = 0;
    friend bool operator==(ParamId, ParamId) = default;
};

/// Flat parameter vector with named matrix views. Biases are stored as 1 x m rows.
class ParamStore {
public:
    struct Entry {
        std::string name;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::size_t offset = 0;
        std::size_t size() const { return rows * cols; }
    };

    explicit ParamStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

    ParamId add(const std::string& name, std::size_t rows, std::size_t cols) {
        if (index_.contains(name)) {
            throw InvalidArgument("duplicate parameter name '" + name + "'");
        }
        Entry e{name, rows, cols, values_.size()};
        values_.resize(values_.size() + e.size(), 0.0);
        index_.emplace(name, entries_.size());
        entries_.push_back(std::move(e));
        return ParamId{entries_.size() - 1};
    }

    ParamId find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw InvalidArgument("unknown parameter '" + name + "'");
        }
        return ParamId{it->second};
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const Entry& entry(ParamId id) const { return entries_.at(id.index); }
    const std::vector<Entry>& entries() const { return entries_; }

    Eigen::Map<const Matrix> view(ParamId id) const {
        const Entry& e = entry(id);
        return {values_.data() + e.offset, static_cast<Eigen::Index>(e.rows), static_cast<Eigen::Index>(e.cols)};
    }
    Eigen::Map<Matrix> view(ParamId id) {
        const Entry& e = entry(id);
        return {values_.data() + e.offset, static_cast<Eigen::Index>(e.rows), static_cast<Eigen::Index>(e.cols)};
    }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::size_t size() const { return values_.size(); }
    std::uint64_t rng_seed() const { return rng_seed_; }

    /// Name of the tensor that owns flat position `pos`.
    const std::string& owner_of(std::size_t pos) const {
        for (const Entry& e : entries_) {
            if (pos >= e.offset && pos < e.offset + e.size()) return e.name;
        }
        throw InvalidArgument("flat index " + std::to_string(pos) + " outside parameter store");
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = cols.
    template <class Rng>
    void init_uniform_fan_in(ParamId id, Rng& rng) {
        auto w = view(id);
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(w.cols(), 1)));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    }

private:
    std::vector<double> values_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t rng_seed_;
};

} // namespace dlw::numerics
