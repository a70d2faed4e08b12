#include "fedsplit/stack.hpp"

#include <numeric>
#include <sstream>

namespace fedsplit::nn {

Task Task::classification(size_t classes) {
    if (classes < 2) throw ConfigError("classification task needs at least 2 classes");
    Task t;
    t.kind = TaskKind::Classification;
    t.classes = classes;
    return t;
}

Task Task::regression() {
    Task t;
    t.kind = TaskKind::Regression;
    t.classes = 0;
    return t;
}

LayerStack::LayerStack(std::vector<Layer> layers, std::vector<size_t> input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
    if (input_shape_.empty()) throw ConfigError("layer stack needs a non-empty input shape");
    for (size_t d : input_shape_)
        if (d == 0) throw ConfigError("layer stack input shape has a zero dimension");
    infer_shapes();
}

void LayerStack::infer_shapes() {
    std::vector<size_t> shape = input_shape_;
    for (size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].name.empty()) {
            layers_[i].name = std::string(kind_name(layers_[i].kind)) + "_" + std::to_string(i);
        }
        shape = layers_[i].out_shape(shape);
    }
    output_shape_ = shape;
}

size_t LayerStack::output_width() const {
    return std::accumulate(output_shape_.begin(), output_shape_.end(), size_t{1}, std::multiplies<>());
}

size_t LayerStack::parameter_count() const {
    size_t n = 0;
    for (const Layer& l : layers_) n += l.parameter_count();
    return n;
}

size_t LayerStack::state_scalar_count() const {
    size_t n = parameter_count();
    for (const Layer& l : layers_)
        if (l.has_running_stats()) n += l.running_mean.size() + l.running_var.size();
    return n;
}

void LayerStack::init_weights(Rng& rng) {
    for (Layer& l : layers_) l.init_weights(rng);
}

namespace {

Tensor batchify(const Tensor& batch, const std::vector<size_t>& sample_shape, const std::string& what) {
    if (batch.rank() < 1 || batch.dim(0) == 0) throw ConfigError(what + ": empty batch");
    std::vector<size_t> expect{batch.dim(0)};
    expect.insert(expect.end(), sample_shape.begin(), sample_shape.end());
    if (batch.shape() == expect) return batch;
    // Accept a flattened per-sample layout when the scalar count agrees.
    const size_t want = std::accumulate(sample_shape.begin(), sample_shape.end(), size_t{1}, std::multiplies<>());
    if (batch.row_size() == want) return batch.reshaped(expect);
    throw ConfigError(what + ": batch shape " + Tensor::shape_str(batch.shape()) + " does not match expected " +
                      Tensor::shape_str(expect));
}

} // namespace

Tensor LayerStack::forward(const Tensor& batch, Mode mode, Tape& tape) {
    if (tape.recorded) throw ConfigError("tape already holds a forward pass; use a fresh tape");
    Tensor x = batchify(batch, input_shape_, "forward");
    tape.input_batch_shape = x.shape();
    tape.mode = mode;
    tape.caches.assign(layers_.size(), LayerCache{});
    for (size_t i = 0; i < layers_.size(); ++i) {
        x = layer_forward(layers_[i], x, mode, tape.caches[i]);
        ensure_finite(x, "layer " + layers_[i].name);
    }
    tape.recorded = true;
    return x;
}

Tensor LayerStack::predict(const Tensor& batch) {
    Tensor x = batchify(batch, input_shape_, "predict");
    LayerCache scratch;
    for (size_t i = 0; i < layers_.size(); ++i) {
        scratch = LayerCache{};
        x = layer_forward(layers_[i], x, Mode::Eval, scratch);
        ensure_finite(x, "layer " + layers_[i].name);
    }
    return x;
}

Tensor LayerStack::backward(Tape& tape, const Tensor& upstream_grad, std::vector<Tensor>& weight_grads) {
    if (!tape.recorded) throw ConfigError("stale tape: backward called before forward");
    if (tape.consumed) throw ConfigError("stale tape: backward already consumed this tape");
    if (tape.caches.size() != layers_.size()) {
        throw ConfigError("tape does not belong to this stack (layer count mismatch)");
    }
    std::vector<size_t> expect{tape.input_batch_shape[0]};
    expect.insert(expect.end(), output_shape_.begin(), output_shape_.end());
    Tensor g = upstream_grad;
    if (g.shape() != expect) {
        if (g.size() != std::accumulate(expect.begin(), expect.end(), size_t{1}, std::multiplies<>())) {
            throw ConfigError("backward: upstream gradient shape " + Tensor::shape_str(g.shape()) +
                              " does not match stack output " + Tensor::shape_str(expect));
        }
        g = g.reshaped(expect);
    }
    tape.consumed = true;

    std::vector<std::vector<Tensor>> per_layer(layers_.size());
    for (size_t i = layers_.size(); i-- > 0;) {
        g = layer_backward(layers_[i], tape.caches[i], tape.mode, g, per_layer[i]);
    }
    for (size_t i = 0; i < layers_.size(); ++i)
        for (Tensor& t : per_layer[i]) weight_grads.push_back(std::move(t));
    ensure_finite(g, "input gradient");
    return g;
}

std::vector<Tensor*> LayerStack::weight_refs() {
    std::vector<Tensor*> out;
    for (Layer& l : layers_)
        for (Tensor& w : l.weights) out.push_back(&w);
    return out;
}

std::vector<const Tensor*> LayerStack::weight_refs() const {
    std::vector<const Tensor*> out;
    for (const Layer& l : layers_)
        for (const Tensor& w : l.weights) out.push_back(&w);
    return out;
}

std::vector<Tensor> LayerStack::weights_copy() const {
    std::vector<Tensor> out;
    for (const Layer& l : layers_)
        for (const Tensor& w : l.weights) out.push_back(w);
    return out;
}

void LayerStack::set_weights(const std::vector<Tensor>& ws) {
    auto refs = weight_refs();
    if (ws.size() != refs.size()) {
        throw ConfigError("set_weights: expected " + std::to_string(refs.size()) + " tensors, got " +
                          std::to_string(ws.size()));
    }
    for (size_t i = 0; i < refs.size(); ++i) {
        if (!refs[i]->same_shape(ws[i])) {
            throw ConfigError("set_weights: tensor " + std::to_string(i) + " shape mismatch (" +
                              Tensor::shape_str(ws[i].shape()) + " vs " + Tensor::shape_str(refs[i]->shape()) + ")");
        }
        *refs[i] = ws[i];
    }
}

std::vector<Tensor> LayerStack::state_copy() const {
    std::vector<Tensor> out = weights_copy();
    for (const Layer& l : layers_)
        if (l.has_running_stats()) {
            out.push_back(l.running_mean);
            out.push_back(l.running_var);
        }
    return out;
}

void LayerStack::set_state(const std::vector<Tensor>& st) {
    size_t n_weights = weight_refs().size();
    size_t n_stats = 0;
    for (const Layer& l : layers_)
        if (l.has_running_stats()) n_stats += 2;
    if (st.size() != n_weights + n_stats) {
        throw ConfigError("set_state: expected " + std::to_string(n_weights + n_stats) + " tensors, got " +
                          std::to_string(st.size()));
    }
    set_weights({st.begin(), st.begin() + static_cast<long>(n_weights)});
    size_t idx = n_weights;
    for (Layer& l : layers_)
        if (l.has_running_stats()) {
            l.running_mean = st[idx++];
            l.running_var = st[idx++];
        }
}

std::string LayerStack::describe() const {
    std::ostringstream os;
    os << Tensor::shape_str(input_shape_);
    for (const Layer& l : layers_) os << " -> " << l.name;
    os << " -> " << Tensor::shape_str(output_shape_);
    return os.str();
}

SubNetworks split(const LayerStack& stack, CutSpec cut) {
    const size_t n = stack.depth();
    if (cut.c > n) {
        throw ConfigError("cut layer " + std::to_string(cut.c) + " out of range for a " + std::to_string(n) +
                          "-layer stack");
    }
    SubNetworks parts;
    std::vector<Layer> fi_layers(stack.layers().begin(), stack.layers().begin() + static_cast<long>(cut.c));
    std::vector<Layer> fs_layers(stack.layers().begin() + static_cast<long>(cut.c), stack.layers().end());
    if (fi_layers.empty()) {
        Layer id = Layer::identity();
        id.name = "identity_cut0";
        fi_layers.push_back(id);
    }
    parts.fi = LayerStack(std::move(fi_layers), stack.input_shape());
    parts.fs = LayerStack(std::move(fs_layers), parts.fi.output_shape());
    parts.last_layer_cut = parts.fs.depth() == 0;
    if (parts.last_layer_cut) {
        log_info("cut layer equals network depth: server sub-network is empty and training cannot succeed");
    }
    return parts;
}

LayerStack join(const SubNetworks& parts) {
    std::vector<Layer> layers;
    for (const Layer& l : parts.fi.layers()) {
        if (l.kind == LayerKind::Identity && l.name == "identity_cut0") continue;  // synthetic c=0 placeholder
        layers.push_back(l);
    }
    for (const Layer& l : parts.fs.layers()) layers.push_back(l);
    return LayerStack(std::move(layers), parts.fi.input_shape());
}

} // namespace fedsplit::nn
