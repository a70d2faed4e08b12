#pragma once

#include <string>
#include <vector>

#include "fedsplit/dataset.hpp"
#include "fedsplit/partition.hpp"
#include "fedsplit/strategies.hpp"

namespace fedsplit::cfg {

// ---------------------------------------------------------------------------
// Experiment configuration: one structured text file with [section] headers
// and key=value pairs. The schema is strict — unknown sections or keys abort
// with an error naming the offender, so typos cannot silently change a run.
// ---------------------------------------------------------------------------

struct DatasetSpec {
    enum class Source { SynthClassification, SynthRegression, Csv };
    Source source = Source::SynthClassification;

    // synthetic sources
    size_t samples = 256;
    size_t classes = 2;
    size_t dims = 2;
    double separation = 2.0;  // classification blob spacing
    double noise = 0.1;       // regression label noise
    size_t test_samples = 0;  // 0: max(samples/4, 10*classes)

    // csv source
    std::string path;
    std::string test_path;
    std::string label_column = "label";
    nn::TaskKind csv_task = nn::TaskKind::Classification;

    // optional per-sample reshape (e.g. "2,4,4" to feed convolutions)
    std::vector<size_t> shape;
};

struct PartitionSpec {
    enum class Kind { Label, Quantity };
    Kind kind = Kind::Label;
    size_t institutions = 1;
    double skew = 0.0;      // label-skew fraction in [0,1]
    double target_ks = -1;  // >= 0: calibrate the skew to this mean KS instead
    std::vector<size_t> dominant_labels;  // optional; default cycles the bins
    std::vector<size_t> quotas;           // optional; default splits evenly
    std::vector<size_t> sizes;            // quantity partition sizes
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::string layers = "dense(8) relu dense(2)";
    strat::StrategyConfig strategy;
    PartitionSpec partition;
    std::vector<u64> seeds{1};
    std::string out_dir = "out";
    std::string export_layer;  // optional: emit embeddings at this boundary

    void validate() const;
};

/// Parses the [dataset]/[model]/[strategy]/[partition]/[run] sections.
/// Unknown keys and malformed values throw ConfigError naming the key.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Builds a stack from the layer DSL, inferring input dimensions from the
/// running sample shape: "conv(8,3,1,1) batchnorm relu flatten dense(10)".
nn::LayerStack build_architecture(const std::string& dsl, const std::vector<size_t>& input_shape);

/// Stable hash of the resolved configuration. Seeds and the output directory
/// are excluded so replays and per-seed records share one hash.
u64 config_hash(const ExperimentConfig& c);

/// Everything one seeded run needs, derived from the master seed's named
/// streams ("data", "test", plus the partition's own "partition" stream).
struct Materialized {
    data::Dataset train;
    data::Dataset test;
    data::Partition partition;
    nn::LayerStack architecture;
    double mean_ks = 0.0;
};

Materialized materialize(const ExperimentConfig& c, u64 seed);

} // namespace fedsplit::cfg
