#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "signdiff/tensor.hpp"

namespace signdiff {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamWConfig config;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::int64_t step = 0;
};

/// Decoupled weight decay Adam: p <- p(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps).
inline void adamw_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimizerState& state) {
    require(params.size() == grads.size(), "adamw_step: parameter and gradient counts differ");
    if (state.first_moment.empty()) {
        for (const Tensor* p : params) {
            state.first_moment.push_back(Tensor::zeros_like(*p));
            state.second_moment.push_back(Tensor::zeros_like(*p));
        }
    }
    require(state.first_moment.size() == params.size(), "adamw_step: optimizer state size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->check_same(*grads[i], "adamw_step");
        params[i]->check_same(state.first_moment[i], "adamw_step moments");
        if (!all_finite(*grads[i])) throw NonFiniteError("adamw_step: non-finite gradient");
    }

    const auto& c = state.config;
    state.step += 1;
    const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - c.learning_rate * c.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        auto g = grads[i]->data();
        auto m = state.first_moment[i].data();
        auto v = state.second_moment[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            p[j] = p[j] * decay - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

}  // namespace signdiff
