#pragma once

#include <string>
#include <vector>

#include "fedsplit/config.hpp"
#include "fedsplit/metrics.hpp"

namespace fedsplit::cli {

struct CliOptions {
    bool has_seed = false;
    u64 seed = 0;          // --seed: replaces the config's seed list
    std::string out;       // --out: overrides run.out_dir
    size_t parallel_seeds = 1;
};

/// Trains one seed end to end and emits its ledger (and embeddings when
/// configured). `seed_count` picks plain vs per-seed artifact filenames.
metrics::RunRecord run_single(const cfg::ExperimentConfig& c, u64 seed,
                              const std::string& out_dir, size_t seed_count);

/// Human-readable institutions / sizes / mean-KS / pairwise-KS block.
std::string partition_summary(const cfg::ExperimentConfig& c, u64 seed);

struct SweepRow {
    size_t cut = 0;
    double metric = 0.0;
    bool failed = false;  // structurally failing cut (no server-side layers)
};

/// Runs the configured experiment once per cut index 0..N (first seed only).
std::vector<SweepRow> sweep_cut(const cfg::ExperimentConfig& c, u64 seed);

struct VerifyResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Self-contained correctness suite: gradient checks (plus a deliberately
/// broken-gradient detection fixture), the chunked-loss identity, the
/// single-institution collapse, v1/v2 weight equality, and ledger-vs-analytic
/// communication totals.
std::vector<VerifyResult> verify_suite();

int cmd_run(const std::string& config_path, const CliOptions& opt);
int cmd_partition(const std::string& config_path, const CliOptions& opt);
int cmd_sweep_cut(const std::string& config_path, const CliOptions& opt);
int cmd_verify();
int cmd_report(const std::string& results_path);

/// Full argv handling (subcommands run/partition/sweep-cut/verify/report).
/// Returns the process exit code: 0 success, 2 configuration error,
/// 3 runtime/numeric error.
int dispatch(const std::vector<std::string>& args);

} // namespace fedsplit::cli
