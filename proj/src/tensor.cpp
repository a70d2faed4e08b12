#include "fedsplit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fedsplit {

namespace {
size_t checked_product(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) throw ConfigError("tensor shape has a zero dimension: " + Tensor::shape_str(shape));
        n *= d;
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<size_t> shape, double fill)
    : shape_(std::move(shape)), data_(checked_product(shape_), fill) {}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> data) {
    Tensor t;
    const size_t n = checked_product(shape);
    if (n != data.size()) {
        throw ConfigError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::reshaped(std::vector<size_t> shape) const {
    if (checked_product(shape) != size()) {
        throw ConfigError("reshape from " + shape_str() + " to " + shape_str(shape) +
                          " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

size_t Tensor::row_size() const {
    if (shape_.empty()) return 0;
    return size() / shape_[0];
}

Tensor Tensor::slice_rows(size_t begin, size_t end) const {
    if (shape_.empty()) throw ConfigError("slice_rows on rank-0 tensor");
    if (begin > end || end > shape_[0]) {
        throw ConfigError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") out of range for leading dim " + std::to_string(shape_[0]));
    }
    std::vector<size_t> shape = shape_;
    shape[0] = end - begin;
    const size_t rs = row_size();
    std::vector<double> out(data_.begin() + static_cast<long>(begin * rs),
                            data_.begin() + static_cast<long>(end * rs));
    return Tensor::from(std::move(shape), std::move(out));
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str(std::span<const size_t> shape) {
    std::ostringstream ss;
    ss << "[";
    for (size_t i = 0; i < shape.size(); ++i) ss << (i ? "x" : "") << shape[i];
    ss << "]";
    return ss.str();
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ConfigError("concat_batch: empty part list");
    const Tensor& first = parts.front();
    if (first.rank() == 0) throw ConfigError("concat_batch: rank-0 part");
    size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.rank() ||
            !std::equal(p.shape().begin() + 1, p.shape().end(), first.shape().begin() + 1)) {
            throw ConfigError("concat_batch: trailing dimensions differ (" + p.shape_str() +
                              " vs " + first.shape_str() + ")");
        }
        total += p.dim(0);
    }
    std::vector<size_t> shape = first.shape();
    shape[0] = total;
    std::vector<double> data;
    data.reserve(total * first.row_size());
    for (const Tensor& p : parts) data.insert(data.end(), p.vec().begin(), p.vec().end());
    return Tensor::from(std::move(shape), std::move(data));
}

void ensure_finite(const Tensor& t, const std::string& context) {
    if (!t.all_finite()) {
        throw NumericError("non-finite value in " + context);
    }
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ConfigError("max_rel_diff: shapes differ (" + a.shape_str() + " vs " + b.shape_str() + ")");
    }
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1.0});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

} // namespace fedsplit
