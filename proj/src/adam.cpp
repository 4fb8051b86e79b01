#include "plumeemu/adam.hpp"

#include <cmath>

#include "plumeemu/error.hpp"

namespace plumeemu {

AdamState::AdamState(const std::vector<Tensor>& params, AdamConfig cfg) : config(cfg) {
    if (!(cfg.learning_rate > 0 && cfg.beta1 > 0 && cfg.beta2 > 0 && cfg.epsilon > 0))
        throw ConfigError("adam: hyperparameters must be positive");
    first_moment.reserve(params.size());
    second_moment.reserve(params.size());
    for (const auto& p : params) {
        first_moment.emplace_back(p.shape(), 0.0);
        second_moment.emplace_back(p.shape(), 0.0);
    }
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw DimensionError("adam_step: parameter, gradient and state counts differ");
    const auto& c = state.config;
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& theta = params[p];
        const Tensor& g = grads[p];
        if (g.shape() != theta.shape() || state.first_moment[p].shape() != theta.shape())
            throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(p));
        Tensor& m = state.first_moment[p];
        Tensor& v = state.second_moment[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            theta[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

}  // namespace plumeemu
