#pragma once

#include <string>
#include <vector>

#include "fedsplit/dataset.hpp"
#include "fedsplit/stack.hpp"
#include "fedsplit/tensor.hpp"

namespace fedsplit::metrics {

/// Final evaluation of one trained run: the headline metric (accuracy for
/// classification, MAE for regression), its per-institution breakdown, the
/// per-epoch training-loss curve, and the communication totals.
struct Metrics {
    nn::TaskKind task = nn::TaskKind::Classification;
    double value = 0.0;  // mean of per_institution
    std::vector<double> per_institution;
    std::vector<double> loss_curve;
    u64 uplink_scalars = 0;
    u64 downlink_scalars = 0;
    u64 uplink_label_scalars = 0;
};

/// Fraction of rows whose argmax logit equals the integer label.
/// predictions [B,C], labels [B] (class indices stored as reals).
double accuracy(const Tensor& predictions, const Tensor& labels);

/// Mean |prediction - label|; predictions [B] or [B,1], labels likewise.
double mean_absolute_error(const Tensor& predictions, const Tensor& labels);

/// Empirical representation-divergence diagnostic: for each institution, the
/// L2 distance between its mean feature vector and the pooled mean, divided
/// by the pooled per-coordinate standard deviation. Zero when every
/// institution's feature set has the pooled mean (degenerate pooled spread
/// included). Inputs are per-institution feature tensors [n_k, ...] sharing
/// trailing dimensions.
std::vector<double> feature_divergence(const std::vector<Tensor>& per_institution_features);

/// Write (sample, label, feature...) rows of the activations at the boundary
/// directly after the layer named `layer_tag`.
void export_embeddings(const nn::LayerStack& model, const data::Dataset& ds,
                       const std::string& layer_tag, const std::string& path);

/// One finished experiment, ready for reporting. The config hash covers the
/// resolved configuration (not wall time), so replays hash identically.
struct RunRecord {
    u64 config_hash = 0;
    u64 seed = 0;
    std::string strategy;
    double partition_ks = 0.0;
    u64 epochs_run = 0;
    double wall_seconds = 0.0;
    Metrics metrics;
};

/// Writes <out_dir>/results.json (schema v1) and <out_dir>/results.csv, one
/// row per record. An empty record list still produces the CSV header and an
/// empty JSON record array.
void emit_report(const std::vector<RunRecord>& records, const std::string& out_dir);

/// Parses a results.json written by emit_report (round-trip support).
std::vector<RunRecord> read_report_json(const std::string& path);

} // namespace fedsplit::metrics
