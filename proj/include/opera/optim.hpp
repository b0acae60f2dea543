#pragma once

#include <opera/tensor.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace opera {

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moment estimates, one slot per parameter tensor.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
};

/// One bias-corrected Adam update of every parameter from its grad slot;
/// grads are zeroed afterwards.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].values_mut();
        auto g = params[i].grad_mut();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (g.size() != w.size() || m.size() != w.size()) {
            throw std::invalid_argument("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            w[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
        params[i].zero_grad();
    }
}

}  // namespace opera
