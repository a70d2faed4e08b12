#pragma once

#include <vector>

#include "fedsplit/tensor.hpp"

namespace fedsplit::nn {

// Classical momentum SGD: v <- mu*v + g; w <- w - lr*v.
// Velocity buffers are created on the first step to mirror the weight shapes.
struct OptimState {
    double lr = 0.001;
    double momentum = 0.9;
    std::vector<Tensor> velocity;

    OptimState() = default;
    OptimState(double lr_, double momentum_);
};

void sgd_step(const std::vector<Tensor*>& weights, const std::vector<Tensor>& grads, OptimState& state);

} // namespace fedsplit::nn
