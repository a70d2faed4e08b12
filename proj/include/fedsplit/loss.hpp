#pragma once

#include <utility>
#include <vector>

#include "fedsplit/tensor.hpp"

namespace fedsplit::nn {

enum class LossKind { CrossEntropy, L1 };

struct LossResult {
    double value = 0.0;  // SUM reduction over the batch
    Tensor grad;         // dValue/dPredictions, same shape as predictions
};

struct ChunkedLossResult {
    double value = 0.0;
    std::vector<Tensor> chunk_grads;
    std::vector<double> per_chunk_values;
};

// Predictions: [B,C] logits for cross-entropy (softmax fused into the loss),
// [B,1] or [B] for L1. Labels: [B] class indices or [B,C] one-hot targets for
// cross-entropy, [B] or [B,1] reals for L1. Reduction is SUM over the batch;
// callers normalize the gradient by total batch size before stepping.
LossResult loss(LossKind kind, const Tensor& predictions, const Tensor& labels);

// Evaluates per-chunk losses and gradients; the total equals the loss of the
// concatenated batch, and chunk_grads[k] equals the k-th row-slice of the
// full-batch gradient exactly.
ChunkedLossResult loss_chunked(LossKind kind, const std::vector<std::pair<Tensor, Tensor>>& chunks);

} // namespace fedsplit::nn
