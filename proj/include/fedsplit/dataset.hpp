#pragma once

#include <string>
#include <vector>

#include "fedsplit/stack.hpp"
#include "fedsplit/tensor.hpp"

namespace fedsplit::data {

/// A sample pool: features [M, dims...], labels [M] (class indices as reals,
/// or real targets), and the task the labels belong to.
struct Dataset {
    Tensor features;
    Tensor labels;
    nn::Task task;

    size_t size() const { return features.empty() ? 0 : features.dim(0); }
    std::vector<size_t> sample_shape() const;

    /// Rows `indices` of features/labels, in the order given.
    Dataset subset(const std::vector<size_t>& indices) const;

    void validate() const;
};

/// Gaussian class blobs: class c is centered at separation * e_{c mod dims};
/// labels cycle 0..C-1 so classes are exactly balanced.
Dataset synth_classification(size_t n, size_t classes, size_t dims, double separation, u64 seed);

/// Linear target plus a sine nonlinearity on the first feature, with additive
/// Gaussian label noise.
Dataset synth_regression(size_t n, size_t dims, double noise, u64 seed);

struct CsvSchema {
    std::string label_column = "label";
    nn::TaskKind task = nn::TaskKind::Classification;
    size_t classes = 0;  // 0: infer from the labels
};

Dataset load_csv(const std::string& path, const CsvSchema& schema = {});
void write_csv(const std::string& path, const Dataset& ds);

} // namespace fedsplit::data
