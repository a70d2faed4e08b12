#include "fedsplit/layer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedsplit::nn {

const char* kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Identity: return "identity";
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2D: return "conv";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::GlobalAvgPool: return "gap";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::GroupNorm: return "groupnorm";
    }
    return "?";
}

Layer Layer::identity() {
    Layer l;
    l.kind = LayerKind::Identity;
    return l;
}

Layer Layer::dense(size_t in, size_t out) {
    if (in == 0 || out == 0) throw ConfigError("dense layer needs positive in/out");
    Layer l;
    l.kind = LayerKind::Dense;
    l.in = in;
    l.out = out;
    l.weights = {Tensor({in, out}), Tensor({out})};
    return l;
}

Layer Layer::conv2d(size_t in_ch, size_t out_ch, size_t kernel, size_t stride, size_t pad) {
    if (in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0) {
        throw ConfigError("conv layer needs positive channels/kernel/stride");
    }
    Layer l;
    l.kind = LayerKind::Conv2D;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    l.weights = {Tensor({out_ch, in_ch, kernel, kernel}), Tensor({out_ch})};
    return l;
}

Layer Layer::relu() {
    Layer l;
    l.kind = LayerKind::ReLU;
    return l;
}

Layer Layer::flatten() {
    Layer l;
    l.kind = LayerKind::Flatten;
    return l;
}

Layer Layer::global_avg_pool() {
    Layer l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
}

Layer Layer::batch_norm(size_t channels) {
    if (channels == 0) throw ConfigError("batchnorm needs positive channel count");
    Layer l;
    l.kind = LayerKind::BatchNorm;
    l.channels = channels;
    l.weights = {Tensor({channels}, 1.0), Tensor({channels}, 0.0)};
    l.running_mean = Tensor({channels}, 0.0);
    l.running_var = Tensor({channels}, 1.0);
    return l;
}

Layer Layer::group_norm(size_t groups, size_t channels) {
    if (channels == 0 || groups == 0) throw ConfigError("groupnorm needs positive groups/channels");
    if (channels % groups != 0) {
        size_t suggestion = std::min(groups, channels);
        while (suggestion > 1 && channels % suggestion != 0) --suggestion;
        throw ConfigError("groupnorm: " + std::to_string(groups) + " groups do not divide " +
                          std::to_string(channels) + " channels; try groups=" + std::to_string(suggestion));
    }
    Layer l;
    l.kind = LayerKind::GroupNorm;
    l.channels = channels;
    l.groups = groups;
    l.weights = {Tensor({channels}, 1.0), Tensor({channels}, 0.0)};
    return l;
}

size_t Layer::parameter_count() const {
    size_t n = 0;
    for (const Tensor& w : weights) n += w.size();
    return n;
}

void Layer::init_weights(Rng& rng) {
    switch (kind) {
        case LayerKind::Dense: {
            const double std = std::sqrt(2.0 / static_cast<double>(in));
            for (double& v : weights[0].vec()) v = rng.normal(0.0, std);
            std::fill(weights[1].vec().begin(), weights[1].vec().end(), 0.0);
            break;
        }
        case LayerKind::Conv2D: {
            const double std = std::sqrt(2.0 / static_cast<double>(in_ch * kernel * kernel));
            for (double& v : weights[0].vec()) v = rng.normal(0.0, std);
            std::fill(weights[1].vec().begin(), weights[1].vec().end(), 0.0);
            break;
        }
        case LayerKind::BatchNorm:
            std::fill(weights[0].vec().begin(), weights[0].vec().end(), 1.0);
            std::fill(weights[1].vec().begin(), weights[1].vec().end(), 0.0);
            std::fill(running_mean.vec().begin(), running_mean.vec().end(), 0.0);
            std::fill(running_var.vec().begin(), running_var.vec().end(), 1.0);
            break;
        case LayerKind::GroupNorm:
            std::fill(weights[0].vec().begin(), weights[0].vec().end(), 1.0);
            std::fill(weights[1].vec().begin(), weights[1].vec().end(), 0.0);
            break;
        default:
            break;
    }
}

std::vector<size_t> Layer::out_shape(const std::vector<size_t>& in_shape) const {
    const auto fail = [&](const std::string& why) -> std::vector<size_t> {
        throw ConfigError("layer " + (name.empty() ? std::string(kind_name(kind)) : name) + ": " + why +
                          " (input sample shape " + Tensor::shape_str(in_shape) + ")");
    };
    const size_t flat = std::accumulate(in_shape.begin(), in_shape.end(), size_t{1}, std::multiplies<>());
    switch (kind) {
        case LayerKind::Identity:
        case LayerKind::ReLU:
            return in_shape;
        case LayerKind::Dense:
            if (in_shape.size() != 1) return fail("expects flat features; add a flatten layer first");
            if (in_shape[0] != in) return fail("expects " + std::to_string(in) + " input features");
            return {out};
        case LayerKind::Conv2D: {
            if (in_shape.size() != 3) return fail("expects [channels,height,width] input");
            if (in_shape[0] != in_ch) return fail("expects " + std::to_string(in_ch) + " input channels");
            const size_t h = in_shape[1] + 2 * pad, w = in_shape[2] + 2 * pad;
            if (h < kernel || w < kernel) return fail("kernel larger than padded input");
            return {out_ch, (h - kernel) / stride + 1, (w - kernel) / stride + 1};
        }
        case LayerKind::Flatten:
            return {flat};
        case LayerKind::GlobalAvgPool:
            if (in_shape.size() != 3) return fail("expects [channels,height,width] input");
            return {in_shape[0]};
        case LayerKind::BatchNorm:
        case LayerKind::GroupNorm:
            if (in_shape.size() != 1 && in_shape.size() != 3) return fail("expects rank-1 or rank-3 input");
            if (in_shape[0] != channels) return fail("expects " + std::to_string(channels) + " channels");
            return in_shape;
    }
    return fail("unknown layer kind");
}

namespace {

// Shared norm-layer geometry: batch x channels x spatial, for rank-2 or rank-4 batches.
struct NormDims {
    size_t batch, channels, spatial;
};

NormDims norm_dims(const Tensor& x, size_t channels) {
    if (x.rank() == 2) return {x.dim(0), channels, 1};
    return {x.dim(0), channels, x.dim(2) * x.dim(3)};
}

inline size_t ncs_index(const NormDims& d, size_t n, size_t c, size_t s) {
    return (n * d.channels + c) * d.spatial + s;
}

Tensor dense_forward(const Layer& l, const Tensor& x) {
    const size_t batch = x.dim(0);
    const Tensor& weight = l.weights[0];
    const Tensor& bias = l.weights[1];
    Tensor y({batch, l.out});
    for (size_t b = 0; b < batch; ++b) {
        for (size_t o = 0; o < l.out; ++o) {
            double acc = bias[o];
            for (size_t i = 0; i < l.in; ++i) acc += x.at2(b, i) * weight.at2(i, o);
            y.at2(b, o) = acc;
        }
    }
    return y;
}

Tensor dense_backward(const Layer& l, const Tensor& x, const Tensor& dy, std::vector<Tensor>& wg) {
    const size_t batch = x.dim(0);
    const Tensor& weight = l.weights[0];
    Tensor dw({l.in, l.out});
    Tensor db({l.out});
    Tensor dx({batch, l.in});
    for (size_t b = 0; b < batch; ++b) {
        for (size_t o = 0; o < l.out; ++o) {
            const double g = dy.at2(b, o);
            db[o] += g;
            for (size_t i = 0; i < l.in; ++i) {
                dw.at2(i, o) += g * x.at2(b, i);
                dx.at2(b, i) += g * weight.at2(i, o);
            }
        }
    }
    wg.push_back(std::move(dw));
    wg.push_back(std::move(db));
    return dx;
}

Tensor conv_forward(const Layer& l, const Tensor& x) {
    const size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
    const size_t oh = (h + 2 * l.pad - l.kernel) / l.stride + 1;
    const size_t ow = (w + 2 * l.pad - l.kernel) / l.stride + 1;
    const Tensor& weight = l.weights[0];
    const Tensor& bias = l.weights[1];
    Tensor y({batch, l.out_ch, oh, ow});
    for (size_t n = 0; n < batch; ++n)
        for (size_t oc = 0; oc < l.out_ch; ++oc)
            for (size_t i = 0; i < oh; ++i)
                for (size_t j = 0; j < ow; ++j) {
                    double acc = bias[oc];
                    for (size_t ic = 0; ic < l.in_ch; ++ic)
                        for (size_t kh = 0; kh < l.kernel; ++kh) {
                            const long ih = static_cast<long>(i * l.stride + kh) - static_cast<long>(l.pad);
                            if (ih < 0 || ih >= static_cast<long>(h)) continue;
                            for (size_t kw = 0; kw < l.kernel; ++kw) {
                                const long iw = static_cast<long>(j * l.stride + kw) - static_cast<long>(l.pad);
                                if (iw < 0 || iw >= static_cast<long>(w)) continue;
                                acc += x.at4(n, ic, static_cast<size_t>(ih), static_cast<size_t>(iw)) *
                                       weight.at4(oc, ic, kh, kw);
                            }
                        }
                    y.at4(n, oc, i, j) = acc;
                }
    return y;
}

Tensor conv_backward(const Layer& l, const Tensor& x, const Tensor& dy, std::vector<Tensor>& wg) {
    const size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
    const size_t oh = dy.dim(2), ow = dy.dim(3);
    const Tensor& weight = l.weights[0];
    Tensor dw({l.out_ch, l.in_ch, l.kernel, l.kernel});
    Tensor db({l.out_ch});
    Tensor dx({batch, l.in_ch, h, w});
    for (size_t n = 0; n < batch; ++n)
        for (size_t oc = 0; oc < l.out_ch; ++oc)
            for (size_t i = 0; i < oh; ++i)
                for (size_t j = 0; j < ow; ++j) {
                    const double g = dy.at4(n, oc, i, j);
                    db[oc] += g;
                    for (size_t ic = 0; ic < l.in_ch; ++ic)
                        for (size_t kh = 0; kh < l.kernel; ++kh) {
                            const long ih = static_cast<long>(i * l.stride + kh) - static_cast<long>(l.pad);
                            if (ih < 0 || ih >= static_cast<long>(h)) continue;
                            for (size_t kw = 0; kw < l.kernel; ++kw) {
                                const long iw = static_cast<long>(j * l.stride + kw) - static_cast<long>(l.pad);
                                if (iw < 0 || iw >= static_cast<long>(w)) continue;
                                dw.at4(oc, ic, kh, kw) += g * x.at4(n, ic, static_cast<size_t>(ih),
                                                                    static_cast<size_t>(iw));
                                dx.at4(n, ic, static_cast<size_t>(ih), static_cast<size_t>(iw)) +=
                                    g * weight.at4(oc, ic, kh, kw);
                            }
                        }
                }
    wg.push_back(std::move(dw));
    wg.push_back(std::move(db));
    return dx;
}

Tensor batchnorm_forward(Layer& l, const Tensor& x, Mode mode, LayerCache& cache) {
    const NormDims d = norm_dims(x, l.channels);
    const size_t n_red = d.batch * d.spatial;
    const Tensor& gamma = l.weights[0];
    const Tensor& beta = l.weights[1];
    Tensor y(x.shape());
    Tensor x_hat(x.shape());
    Tensor inv_std({d.channels});
    for (size_t c = 0; c < d.channels; ++c) {
        double mean, var;
        if (mode == Mode::Train) {
            double sum = 0.0;
            for (size_t n = 0; n < d.batch; ++n)
                for (size_t s = 0; s < d.spatial; ++s) sum += x[ncs_index(d, n, c, s)];
            mean = sum / static_cast<double>(n_red);
            double sq = 0.0;
            for (size_t n = 0; n < d.batch; ++n)
                for (size_t s = 0; s < d.spatial; ++s) {
                    const double dv = x[ncs_index(d, n, c, s)] - mean;
                    sq += dv * dv;
                }
            var = sq / static_cast<double>(n_red);  // biased, used for normalization
            const double unbiased = n_red > 1 ? sq / static_cast<double>(n_red - 1) : var;
            l.running_mean[c] = (1.0 - l.bn_momentum) * l.running_mean[c] + l.bn_momentum * mean;
            l.running_var[c] = (1.0 - l.bn_momentum) * l.running_var[c] + l.bn_momentum * unbiased;
        } else {
            mean = l.running_mean[c];
            var = l.running_var[c];
        }
        const double istd = 1.0 / std::sqrt(var + l.eps);
        inv_std[c] = istd;
        for (size_t n = 0; n < d.batch; ++n)
            for (size_t s = 0; s < d.spatial; ++s) {
                const size_t idx = ncs_index(d, n, c, s);
                x_hat[idx] = (x[idx] - mean) * istd;
                y[idx] = gamma[c] * x_hat[idx] + beta[c];
            }
    }
    cache.x_hat = std::move(x_hat);
    cache.inv_std = std::move(inv_std);
    return y;
}

Tensor batchnorm_backward(const Layer& l, const LayerCache& cache, Mode mode, const Tensor& dy,
                          std::vector<Tensor>& wg) {
    const NormDims d = norm_dims(dy, l.channels);
    const size_t n_red = d.batch * d.spatial;
    const Tensor& gamma = l.weights[0];
    Tensor dgamma({d.channels});
    Tensor dbeta({d.channels});
    Tensor dx(dy.shape());
    for (size_t c = 0; c < d.channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (size_t n = 0; n < d.batch; ++n)
            for (size_t s = 0; s < d.spatial; ++s) {
                const size_t idx = ncs_index(d, n, c, s);
                sum_dy += dy[idx];
                sum_dy_xhat += dy[idx] * cache.x_hat[idx];
            }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        const double scale = gamma[c] * cache.inv_std[c];
        for (size_t n = 0; n < d.batch; ++n)
            for (size_t s = 0; s < d.spatial; ++s) {
                const size_t idx = ncs_index(d, n, c, s);
                if (mode == Mode::Train) {
                    // batch statistics are functions of x: full chain rule
                    dx[idx] = scale * (dy[idx] - sum_dy / static_cast<double>(n_red) -
                                       cache.x_hat[idx] * sum_dy_xhat / static_cast<double>(n_red));
                } else {
                    dx[idx] = scale * dy[idx];  // running stats are constants
                }
            }
    }
    wg.push_back(std::move(dgamma));
    wg.push_back(std::move(dbeta));
    return dx;
}

Tensor groupnorm_forward(const Layer& l, const Tensor& x, LayerCache& cache) {
    const NormDims d = norm_dims(x, l.channels);
    const size_t cg = l.channels / l.groups;
    const size_t n_red = cg * d.spatial;
    const Tensor& gamma = l.weights[0];
    const Tensor& beta = l.weights[1];
    Tensor y(x.shape());
    Tensor x_hat(x.shape());
    Tensor inv_std({d.batch, l.groups});
    for (size_t n = 0; n < d.batch; ++n)
        for (size_t g = 0; g < l.groups; ++g) {
            double sum = 0.0;
            for (size_t cc = 0; cc < cg; ++cc)
                for (size_t s = 0; s < d.spatial; ++s) sum += x[ncs_index(d, n, g * cg + cc, s)];
            const double mean = sum / static_cast<double>(n_red);
            double sq = 0.0;
            for (size_t cc = 0; cc < cg; ++cc)
                for (size_t s = 0; s < d.spatial; ++s) {
                    const double dv = x[ncs_index(d, n, g * cg + cc, s)] - mean;
                    sq += dv * dv;
                }
            const double istd = 1.0 / std::sqrt(sq / static_cast<double>(n_red) + l.eps);
            inv_std.at2(n, g) = istd;
            for (size_t cc = 0; cc < cg; ++cc) {
                const size_t c = g * cg + cc;
                for (size_t s = 0; s < d.spatial; ++s) {
                    const size_t idx = ncs_index(d, n, c, s);
                    x_hat[idx] = (x[idx] - mean) * istd;
                    y[idx] = gamma[c] * x_hat[idx] + beta[c];
                }
            }
        }
    cache.x_hat = std::move(x_hat);
    cache.inv_std = std::move(inv_std);
    return y;
}

Tensor groupnorm_backward(const Layer& l, const LayerCache& cache, const Tensor& dy,
                          std::vector<Tensor>& wg) {
    const NormDims d = norm_dims(dy, l.channels);
    const size_t cg = l.channels / l.groups;
    const size_t n_red = cg * d.spatial;
    const Tensor& gamma = l.weights[0];
    Tensor dgamma({l.channels});
    Tensor dbeta({l.channels});
    Tensor dx(dy.shape());
    for (size_t n = 0; n < d.batch; ++n)
        for (size_t g = 0; g < l.groups; ++g) {
            double sum1 = 0.0, sum2 = 0.0;
            for (size_t cc = 0; cc < cg; ++cc) {
                const size_t c = g * cg + cc;
                for (size_t s = 0; s < d.spatial; ++s) {
                    const size_t idx = ncs_index(d, n, c, s);
                    const double dxh = dy[idx] * gamma[c];
                    sum1 += dxh;
                    sum2 += dxh * cache.x_hat[idx];
                }
            }
            const double istd = cache.inv_std.at2(n, g);
            for (size_t cc = 0; cc < cg; ++cc) {
                const size_t c = g * cg + cc;
                for (size_t s = 0; s < d.spatial; ++s) {
                    const size_t idx = ncs_index(d, n, c, s);
                    const double dxh = dy[idx] * gamma[c];
                    dx[idx] = istd * (dxh - sum1 / static_cast<double>(n_red) -
                                      cache.x_hat[idx] * sum2 / static_cast<double>(n_red));
                    dgamma[c] += dy[idx] * cache.x_hat[idx];
                    dbeta[c] += dy[idx];
                }
            }
        }
    wg.push_back(std::move(dgamma));
    wg.push_back(std::move(dbeta));
    return dx;
}

} // namespace

Tensor layer_forward(Layer& layer, const Tensor& input, Mode mode, LayerCache& cache) {
    switch (layer.kind) {
        case LayerKind::Identity:
            return input;
        case LayerKind::Dense:
            cache.input = input;
            return dense_forward(layer, input);
        case LayerKind::Conv2D:
            cache.input = input;
            return conv_forward(layer, input);
        case LayerKind::ReLU: {
            cache.input = input;
            Tensor y = input;
            for (double& v : y.vec()) v = v > 0.0 ? v : 0.0;
            return y;
        }
        case LayerKind::Flatten: {
            cache.input = Tensor(input.shape(), 0.0);  // only the shape is needed
            return input.reshaped({input.dim(0), input.row_size()});
        }
        case LayerKind::GlobalAvgPool: {
            cache.input = input;
            const size_t batch = input.dim(0), ch = input.dim(1);
            const size_t sp = input.dim(2) * input.dim(3);
            Tensor y({batch, ch});
            for (size_t n = 0; n < batch; ++n)
                for (size_t c = 0; c < ch; ++c) {
                    double acc = 0.0;
                    for (size_t s = 0; s < sp; ++s) acc += input[(n * ch + c) * sp + s];
                    y.at2(n, c) = acc / static_cast<double>(sp);
                }
            return y;
        }
        case LayerKind::BatchNorm:
            return batchnorm_forward(layer, input, mode, cache);
        case LayerKind::GroupNorm:
            return groupnorm_forward(layer, input, cache);
    }
    throw ConfigError("unknown layer kind in forward");
}

Tensor layer_backward(const Layer& layer, const LayerCache& cache, Mode mode, const Tensor& upstream,
                      std::vector<Tensor>& weight_grads) {
    switch (layer.kind) {
        case LayerKind::Identity:
            return upstream;
        case LayerKind::Dense:
            return dense_backward(layer, cache.input, upstream, weight_grads);
        case LayerKind::Conv2D:
            return conv_backward(layer, cache.input, upstream, weight_grads);
        case LayerKind::ReLU: {
            Tensor dx = upstream;
            for (size_t i = 0; i < dx.size(); ++i)
                if (cache.input[i] <= 0.0) dx[i] = 0.0;
            return dx;
        }
        case LayerKind::Flatten:
            return upstream.reshaped(cache.input.shape());
        case LayerKind::GlobalAvgPool: {
            const size_t batch = cache.input.dim(0), ch = cache.input.dim(1);
            const size_t sp = cache.input.dim(2) * cache.input.dim(3);
            Tensor dx(cache.input.shape());
            for (size_t n = 0; n < batch; ++n)
                for (size_t c = 0; c < ch; ++c) {
                    const double g = upstream.at2(n, c) / static_cast<double>(sp);
                    for (size_t s = 0; s < sp; ++s) dx[(n * ch + c) * sp + s] = g;
                }
            return dx;
        }
        case LayerKind::BatchNorm:
            return batchnorm_backward(layer, cache, mode, upstream, weight_grads);
        case LayerKind::GroupNorm:
            return groupnorm_backward(layer, cache, upstream, weight_grads);
    }
    throw ConfigError("unknown layer kind in backward");
}

} // namespace fedsplit::nn
