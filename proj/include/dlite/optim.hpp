#pragma once

// Adam with bias correction, global-norm gradient clipping, and the step
// learning-rate schedule used for compressor training.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dlite/errors.hpp"
#include "dlite/tensor.hpp"

namespace dlite {

struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    static AdamState for_params(const std::vector<Tensor>& params, float lr) {
        AdamState s;
        s.lr = lr;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.emplace_back(p.data().size(), 0.0f);
            s.v.emplace_back(p.data().size(), 0.0f);
        }
        return s;
    }
};

// Global L2 norm of all gradients together.
inline double grad_global_norm(const std::vector<Tensor>& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (const float g : p.grad()) sq += double(g) * g;
    }
    return std::sqrt(sq);
}

// Scales every gradient by max_norm / norm when the global norm exceeds
// max_norm; otherwise leaves them untouched. Returns the pre-clip norm.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) throw ContractError("clip_grad_norm: max_norm must be positive");
    const double norm = grad_global_norm(params);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& p : params) {
            for (auto& g : p.grad()) g = static_cast<float>(g * s);
        }
    }
    return norm;
}

// One bias-corrected Adam update. Deterministic given identical inputs.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("adam_step: state does not match parameter count");
    state.step += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(state.step));
    const double bc2 = 1.0 - std::pow(b2, double(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi].data();
        const auto& grad = params[pi].grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != value.size())
            throw DimensionError("adam_step: moment buffer does not match parameter shape");
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            value[i] = static_cast<float>(value[i] - state.lr * mhat /
                                                         (std::sqrt(vhat) + state.eps));
        }
    }
}

// Step decay: lr halves every 10 epochs.
inline double lr_schedule(int epoch, double base_lr, int decay_every = 10,
                          double decay = 0.5) {
    if (epoch < 0) throw ContractError("lr_schedule: epoch must be non-negative");
    return base_lr * std::pow(decay, double(epoch / decay_every));
}

}  // namespace dlite
