#pragma once

#include "fedsplit/common.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedsplit {

/// Dense n-dimensional array of doubles, row-major. The sole numeric carrier:
/// batches, weights, gradients, labels and feature maps are all Tensors.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape, double fill = 0.0);
    static Tensor from(std::vector<size_t> shape, std::vector<double> data);

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    /// 2D access (row, col); tensor must be rank 2.
    double& at2(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
    double at2(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }

    /// 4D access (n, c, h, w); tensor must be rank 4.
    double& at4(size_t n, size_t c, size_t h, size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at4(size_t n, size_t c, size_t h, size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same data, new shape; element counts must match.
    Tensor reshaped(std::vector<size_t> shape) const;

    /// Rows [begin, end) along the leading axis.
    Tensor slice_rows(size_t begin, size_t end) const;

    /// Elements per entry of the leading axis.
    size_t row_size() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// Bitwise equality of shape and payload.
    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    static std::string shape_str(std::span<const size_t> shape);
    std::string shape_str() const { return shape_str(shape_); }

private:
    std::vector<size_t> shape_;
    std::vector<double> data_;
};

/// Concatenate along the batch (leading) axis, in the order given.
/// All parts must share trailing dimensions.
Tensor concat_batch(const std::vector<Tensor>& parts);

/// Throw NumericError naming `context` if any entry is NaN/Inf.
void ensure_finite(const Tensor& t, const std::string& context);

/// Max relative difference between two same-shaped tensors:
/// |a-b| / max(|a|, |b|, 1).
double max_rel_diff(const Tensor& a, const Tensor& b);

} // namespace fedsplit
