#pragma once

#include <string>
#include <vector>

#include "fedsplit/layer.hpp"

namespace fedsplit::nn {

// ---------------------------------------------------------------------------
// Task: what the final stack output feeds (sets loss kind and output width).
// ---------------------------------------------------------------------------

enum class TaskKind { Classification, Regression };

struct Task {
    TaskKind kind = TaskKind::Classification;
    size_t classes = 2;  // classification only

    static Task classification(size_t classes);
    static Task regression();
    size_t output_width() const { return kind == TaskKind::Classification ? classes : 1; }
    const char* name() const { return kind == TaskKind::Classification ? "classification" : "regression"; }
};

// ---------------------------------------------------------------------------
// Tape: caches one forward pass for exactly one backward pass.
// ---------------------------------------------------------------------------

struct Tape {
    std::vector<LayerCache> caches;
    std::vector<size_t> input_batch_shape;
    Mode mode = Mode::Train;
    bool recorded = false;
    bool consumed = false;
};

// ---------------------------------------------------------------------------
// LayerStack: an ordered list of layers with a fixed per-sample input shape.
// ---------------------------------------------------------------------------

class LayerStack {
public:
    LayerStack() = default;
    LayerStack(std::vector<Layer> layers, std::vector<size_t> input_shape);

    size_t depth() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    Layer& layer(size_t i) { return layers_.at(i); }
    const Layer& layer(size_t i) const { return layers_.at(i); }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    // Per-sample shapes (batch dimension excluded).
    const std::vector<size_t>& input_shape() const { return input_shape_; }
    const std::vector<size_t>& output_shape() const { return output_shape_; }
    size_t output_width() const;

    size_t parameter_count() const;     // trainable scalars
    size_t state_scalar_count() const;  // trainable scalars + running statistics

    void init_weights(Rng& rng);

    // Forward records onto `tape`; backward consumes it. A tape is single-use.
    Tensor forward(const Tensor& batch, Mode mode, Tape& tape);
    Tensor predict(const Tensor& batch);  // Eval forward, no tape kept

    // Returns gradient w.r.t. the stack input. `weight_grads` receives one
    // tensor per weight tensor, in layer order, mirroring weights().
    Tensor backward(Tape& tape, const Tensor& upstream_grad, std::vector<Tensor>& weight_grads);

    // Flat views over trainable weights (layer order) and full state
    // (weights followed by running statistics, layer order).
    std::vector<Tensor*> weight_refs();
    std::vector<const Tensor*> weight_refs() const;
    std::vector<Tensor> weights_copy() const;
    void set_weights(const std::vector<Tensor>& ws);
    std::vector<Tensor> state_copy() const;
    void set_state(const std::vector<Tensor>& st);

    std::string describe() const;

private:
    void infer_shapes();

    std::vector<Layer> layers_;
    std::vector<size_t> input_shape_;
    std::vector<size_t> output_shape_;
};

// ---------------------------------------------------------------------------
// Cut-layer split. split(F, c) yields FI = layers 1..c and FS = layers c+1..N.
// c = 0 gives an identity FI (raw inputs cross the boundary); c = N gives an
// empty FS, which is flagged because training through it cannot work.
// ---------------------------------------------------------------------------

struct CutSpec {
    size_t c = 0;
};

struct SubNetworks {
    LayerStack fi;
    LayerStack fs;
    bool last_layer_cut = false;  // FS has no layers; flagged as a failing configuration
};

SubNetworks split(const LayerStack& stack, CutSpec cut);
LayerStack join(const SubNetworks& parts);

} // namespace fedsplit::nn
