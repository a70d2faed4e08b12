#include "fedsplit/loss.hpp"

#include <cmath>

#include "fedsplit/common.hpp"

namespace fedsplit::nn {

namespace {

LossResult cross_entropy(const Tensor& logits, const Tensor& labels) {
    if (logits.rank() != 2) throw ConfigError("cross-entropy expects [batch,classes] logits");
    const size_t batch = logits.dim(0), classes = logits.dim(1);
    const bool one_hot = labels.rank() == 2;
    if (one_hot) {
        if (labels.dim(0) != batch || labels.dim(1) != classes) {
            throw ConfigError("one-hot labels " + Tensor::shape_str(labels.shape()) + " do not match logits " +
                              Tensor::shape_str(logits.shape()));
        }
    } else if (labels.rank() != 1 || labels.dim(0) != batch) {
        throw ConfigError("labels " + Tensor::shape_str(labels.shape()) + " do not match logit batch size " +
                          std::to_string(batch));
    }

    LossResult res;
    res.grad = Tensor({batch, classes});
    for (size_t b = 0; b < batch; ++b) {
        double mx = logits.at2(b, 0);
        for (size_t c = 1; c < classes; ++c) mx = std::max(mx, logits.at2(b, c));
        double denom = 0.0;
        for (size_t c = 0; c < classes; ++c) denom += std::exp(logits.at2(b, c) - mx);
        const double log_denom = std::log(denom);

        if (one_hot) {
            for (size_t c = 0; c < classes; ++c) {
                const double p = std::exp(logits.at2(b, c) - mx - log_denom);
                const double t = labels.at2(b, c);
                res.value += t * (log_denom - (logits.at2(b, c) - mx));
                res.grad.at2(b, c) = p - t;
            }
        } else {
            const double raw = labels[b];
            const double rounded = std::nearbyint(raw);
            if (!(std::abs(raw - rounded) < 1e-9) || rounded < 0.0 ||
                rounded >= static_cast<double>(classes)) {
                throw ConfigError("label " + std::to_string(raw) + " out of range for " + std::to_string(classes) +
                                  " classes (row " + std::to_string(b) + ")");
            }
            const size_t t = static_cast<size_t>(rounded);
            res.value += log_denom - (logits.at2(b, t) - mx);
            for (size_t c = 0; c < classes; ++c) {
                res.grad.at2(b, c) = std::exp(logits.at2(b, c) - mx - log_denom) - (c == t ? 1.0 : 0.0);
            }
        }
    }
    ensure_finite(res.grad, "cross-entropy gradient");
    if (!std::isfinite(res.value)) throw NumericError("cross-entropy loss is not finite");
    return res;
}

LossResult l1(const Tensor& predictions, const Tensor& labels) {
    const size_t batch = predictions.dim(0);
    const bool flat_pred = predictions.rank() == 1;
    if (!flat_pred && (predictions.rank() != 2 || predictions.dim(1) != 1)) {
        throw ConfigError("L1 loss expects [batch] or [batch,1] predictions, got " +
                          Tensor::shape_str(predictions.shape()));
    }
    if (labels.size() != batch) {
        throw ConfigError("L1 labels " + Tensor::shape_str(labels.shape()) + " do not match batch size " +
                          std::to_string(batch));
    }
    LossResult res;
    res.grad = Tensor(predictions.shape());
    for (size_t b = 0; b < batch; ++b) {
        const double r = predictions[b] - labels[b];
        res.value += std::abs(r);
        // subgradient at zero residual fixed to 0 for determinism
        res.grad[b] = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    }
    if (!std::isfinite(res.value)) throw NumericError("L1 loss is not finite");
    return res;
}

} // namespace

LossResult loss(LossKind kind, const Tensor& predictions, const Tensor& labels) {
    if (predictions.empty()) throw ConfigError("loss called with empty predictions");
    return kind == LossKind::CrossEntropy ? cross_entropy(predictions, labels) : l1(predictions, labels);
}

ChunkedLossResult loss_chunked(LossKind kind, const std::vector<std::pair<Tensor, Tensor>>& chunks) {
    if (chunks.empty()) throw ConfigError("loss_chunked called with no chunks");
    ChunkedLossResult res;
    for (const auto& [pred, lab] : chunks) {
        LossResult one = loss(kind, pred, lab);
        res.value += one.value;
        res.per_chunk_values.push_back(one.value);
        res.chunk_grads.push_back(std::move(one.grad));
    }
    return res;
}

} // namespace fedsplit::nn
