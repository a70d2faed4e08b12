#pragma once

#include <string>
#include <vector>

#include "fedsplit/dataset.hpp"

namespace fedsplit::data {

/// Disjoint per-institution index lists over one dataset.
struct Partition {
    std::vector<std::vector<size_t>> assignments;

    size_t institutions() const { return assignments.size(); }
    void validate(size_t dataset_size) const;
};

/// Label-skew recipe: institution k fills a fraction `skew_fraction` of its
/// quota from its dominant label pool and the rest uniformly from whatever
/// remains. skew_fraction 0 is plain IID sampling.
struct SkewSpec {
    size_t institutions = 4;
    double skew_fraction = 0.0;
    std::vector<size_t> dominant_labels;  // class index, or quartile bin for regression
    std::vector<size_t> quotas;
    u64 seed = 0;
};

/// Two-sample Kolmogorov-Smirnov statistic over empirical CDFs: 0 for equal
/// multisets, 1 for disjoint supports.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Mean of ks_two_sample over all unordered institution pairs.
double mean_pairwise_ks(const Dataset& ds, const Partition& p);

/// Dominance bin per sample: the class for classification, the label quartile
/// (0..3) for regression.
std::vector<size_t> label_bins(const Dataset& ds);
size_t bin_count(const Dataset& ds);

Partition make_label_skew_partition(const Dataset& ds, const SkewSpec& spec);
Partition make_quantity_skew_partition(const Dataset& ds, const std::vector<size_t>& sizes, u64 seed);

/// Bisection on skew_fraction until the measured mean KS is within 0.05 of
/// target (or 30 iterations); unreachable targets return the closest spec.
SkewSpec calibrate_skew(const Dataset& ds, size_t institutions, double target_ks, u64 seed);

std::string partition_to_json(const Partition& p);
Partition partition_from_json(const std::string& text);

} // namespace fedsplit::data
