#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dlw/error.hpp"
#include "dlw/numerics/param_store.hpp"

namespace dlw::numerics {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const ParamStore& params, double lr) {
        AdamState s;
        s.m.assign(params.size(), 0.0);
        s.v.assign(params.size(), 0.0);
        s.lr = lr;
        return s;
    }
};

/// One bias-corrected Adam update. Gradients are validated before anything is modified.
inline void adam_step(ParamStore& params, std::span<const double> grads, AdamState& state) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam", "gradient/moment length does not match parameter store (" +
                                         std::to_string(params.size()) + ")");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            throw NonFiniteError(params.owner_of(i), "gradient entry " + std::to_string(i));
        }
    }
    state.t += 1;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    auto values = params.values();
    for (std::size_t i = 0; i < grads.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / b1t;
        const double vhat = state.v[i] / b2t;
        values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

} // namespace dlw::numerics
