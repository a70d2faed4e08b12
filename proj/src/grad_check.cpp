#include "fedsplit/grad_check.hpp"

#include <cmath>

namespace fedsplit::nn {

namespace {

double loss_at(LayerStack stack, size_t tensor_idx, size_t elem_idx, double value, const Tensor& batch,
               const Tensor& labels, LossKind kind) {
    auto refs = stack.weight_refs();
    (*refs[tensor_idx])[elem_idx] = value;
    Tape tape;
    Tensor out = stack.forward(batch, Mode::Train, tape);
    return loss(kind, out, labels).value;
}

} // namespace

double grad_check(const LayerStack& stack, const Tensor& batch, const Tensor& labels, LossKind kind,
                  double eps, size_t max_probes) {
    LayerStack work = stack;  // keep the caller's running statistics untouched
    Tape tape;
    Tensor out = work.forward(batch, Mode::Train, tape);
    LossResult base = loss(kind, out, labels);
    std::vector<Tensor> analytic;
    work.backward(tape, base.grad, analytic);

    // Flatten (tensor, element) coordinates.
    std::vector<std::pair<size_t, size_t>> coords;
    auto refs = work.weight_refs();
    for (size_t t = 0; t < refs.size(); ++t)
        for (size_t e = 0; e < refs[t]->size(); ++e) coords.emplace_back(t, e);
    if (coords.empty()) return 0.0;

    const size_t stride = coords.size() <= max_probes ? 1 : (coords.size() + max_probes - 1) / max_probes;
    double worst = 0.0;
    for (size_t i = 0; i < coords.size(); i += stride) {
        const auto [t, e] = coords[i];
        const double w0 = (*refs[t])[e];
        const double f_plus = loss_at(stack, t, e, w0 + eps, batch, labels, kind);
        const double f_minus = loss_at(stack, t, e, w0 - eps, batch, labels, kind);
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double exact = analytic[t][e];
        const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
    return worst;
}

} // namespace fedsplit::nn
