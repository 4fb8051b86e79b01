#pragma once

#include <cstdint>
#include <vector>

#include "plumeemu/tensor.hpp"

namespace plumeemu {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment estimates for one parameter list; moments mirror the parameter shapes.
struct AdamState {
    AdamConfig config;
    std::uint64_t step_count = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;

    AdamState() = default;
    AdamState(const std::vector<Tensor>& params, AdamConfig cfg);
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state);

}  // namespace plumeemu
