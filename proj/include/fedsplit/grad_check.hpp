#pragma once

#include "fedsplit/loss.hpp"
#include "fedsplit/stack.hpp"

namespace fedsplit::nn {

// Compares analytic weight gradients against central finite differences of the
// SUM-reduction loss. Returns the max over probed weights of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// At most `max_probes` weights are probed (evenly strided, deterministic).
double grad_check(const LayerStack& stack, const Tensor& batch, const Tensor& labels, LossKind kind,
                  double eps = 1e-5, size_t max_probes = 400);

} // namespace fedsplit::nn
