#pragma once

#include "fedsplit/rng.hpp"
#include "fedsplit/tensor.hpp"

#include <string>
#include <vector>

namespace fedsplit::nn {

enum class LayerKind { Identity, Dense, Conv2D, ReLU, Flatten, GlobalAvgPool, BatchNorm, GroupNorm };

enum class Mode { Train, Eval };

const char* kind_name(LayerKind kind);

/// One network layer: a kind tag, its dimensions, and its weight tensors.
/// Plain value type so stacks copy, split and serialize without aliasing.
///
/// Weight layout per kind:
///   Dense      {W [in,out], b [out]}
///   Conv2D     {W [out_ch,in_ch,k,k], b [out_ch]}
///   BatchNorm  {gamma [ch], beta [ch]}  + running_mean/running_var buffers
///   GroupNorm  {gamma [ch], beta [ch]}
struct Layer {
    LayerKind kind = LayerKind::Identity;
    std::string name;

    size_t in = 0, out = 0;                              // Dense
    size_t in_ch = 0, out_ch = 0;                        // Conv2D
    size_t kernel = 3, stride = 1, pad = 1;              // Conv2D
    size_t channels = 0, groups = 1;                     // Norm
    double eps = 1e-5;
    double bn_momentum = 0.1;

    std::vector<Tensor> weights;
    Tensor running_mean, running_var;                    // BatchNorm only

    static Layer identity();
    static Layer dense(size_t in, size_t out);
    static Layer conv2d(size_t in_ch, size_t out_ch, size_t kernel = 3, size_t stride = 1, size_t pad = 1);
    static Layer relu();
    static Layer flatten();
    static Layer global_avg_pool();
    static Layer batch_norm(size_t channels);
    static Layer group_norm(size_t groups, size_t channels);

    size_t parameter_count() const;
    bool has_running_stats() const { return kind == LayerKind::BatchNorm; }

    /// Draw fresh weights (He-style normal for Dense/Conv, identity affine for norms).
    void init_weights(Rng& rng);

    /// Output sample shape (no batch dim) for a given input sample shape.
    /// Throws ConfigError on incompatible shapes.
    std::vector<size_t> out_shape(const std::vector<size_t>& in_shape) const;
};

/// Per-layer forward cache; consumed exactly once by the matching backward.
struct LayerCache {
    Tensor input;
    Tensor x_hat;     // norm layers: normalized activations
    Tensor inv_std;   // norm layers: 1/sqrt(var+eps) per reduce-group
};

/// Forward one layer. Train mode updates BatchNorm running stats in place.
Tensor layer_forward(Layer& layer, const Tensor& input, Mode mode, LayerCache& cache);

/// Backward one layer. Returns the input gradient and appends this layer's
/// weight gradients (mirroring `layer.weights` order) to `weight_grads`.
Tensor layer_backward(const Layer& layer, const LayerCache& cache, Mode mode, const Tensor& upstream,
                      std::vector<Tensor>& weight_grads);

} // namespace fedsplit::nn
