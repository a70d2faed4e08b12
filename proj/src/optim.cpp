#include "fedsplit/optim.hpp"

#include "fedsplit/common.hpp"

namespace fedsplit::nn {

OptimState::OptimState(double lr_, double momentum_) : lr(lr_), momentum(momentum_) {
    if (lr < 0.0) throw ConfigError("learning rate must be nonnegative");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
}

void sgd_step(const std::vector<Tensor*>& weights, const std::vector<Tensor>& grads, OptimState& state) {
    if (weights.size() != grads.size()) {
        throw ConfigError("sgd_step: " + std::to_string(weights.size()) + " weight tensors vs " +
                          std::to_string(grads.size()) + " gradient tensors");
    }
    if (state.velocity.empty()) {
        state.velocity.reserve(weights.size());
        for (const Tensor* w : weights) state.velocity.emplace_back(w->shape());
    }
    if (state.velocity.size() != weights.size()) {
        throw ConfigError("sgd_step: optimizer state holds " + std::to_string(state.velocity.size()) +
                          " buffers for " + std::to_string(weights.size()) + " weight tensors");
    }
    for (size_t i = 0; i < weights.size(); ++i) {
        Tensor& w = *weights[i];
        Tensor& v = state.velocity[i];
        const Tensor& g = grads[i];
        if (!w.same_shape(g) || !w.same_shape(v)) {
            throw ConfigError("sgd_step: shape mismatch at tensor " + std::to_string(i) + " (weight " +
                              Tensor::shape_str(w.shape()) + ", grad " + Tensor::shape_str(g.shape()) + ")");
        }
        for (size_t j = 0; j < w.size(); ++j) {
            v[j] = state.momentum * v[j] + g[j];
            w[j] -= state.lr * v[j];
        }
        ensure_finite(w, "weights after sgd step");
    }
}

} // namespace fedsplit::nn
