#pragma once

#include <vector>

#include "fedsplit/dataset.hpp"
#include "fedsplit/federation.hpp"
#include "fedsplit/loss.hpp"
#include "fedsplit/metrics.hpp"
#include "fedsplit/partition.hpp"

namespace fedsplit::strat {

// ---------------------------------------------------------------------------
// Configuration shared by the ten training procedures. Kind-specific fields
// are ignored by other kinds; numeric ranges are validated up front.
// ---------------------------------------------------------------------------

struct StrategyConfig {
    fed::StrategyKind kind = fed::StrategyKind::Centralized;
    nn::CutSpec cut{1};             // split strategies
    size_t batch = 32;              // B
    double lr = 0.001;
    double momentum = 0.0;          // SGD momentum at the trainer(s)
    double server_momentum = 0.9;   // FedAvgM beta
    double shared_fraction = 0.05;  // FedAvg+SD global pool fraction
    size_t gn_groups = 0;           // FedSGD+GN: 0 picks min(32, channels) per layer
    size_t epochs = 1;              // E
    size_t participating = 0;       // St; 0 means all institutions

    void validate() const;
};

// ---------------------------------------------------------------------------
// FedState: everything one training run owns. For split strategies the
// institutions hold their FI sub-networks and the server holds FS; otherwise
// the institutions hold full working copies and the server holds the global
// model. All randomness flows from the master seed through named streams:
// "init" (weights), "batch"/k (minibatches), "sample" (round plans),
// "shared" (FedAvg+SD pool).
// ---------------------------------------------------------------------------

struct FedState {
    StrategyConfig cfg;
    nn::Task task;
    nn::LossKind loss_kind = nn::LossKind::CrossEntropy;
    data::Dataset train;

    std::vector<fed::InstitutionState> institutions;
    fed::ServerState server;
    nn::LayerStack full_model;       // initial full network (shape/count queries)
    nn::LayerStack traveling_fi;     // SplitNN: the FI that cycles across institutions
    nn::OptimState traveling_optim;  // SplitNN: its momentum buffers (travel, unbilled)

    fed::CommLedger ledger;
    std::vector<double> loss_curve;  // mean per-sample training loss per epoch
    u64 epoch = 0;                   // completed epochs == current ledger round
    size_t st = 1;                   // resolved participation count
    bool split_mode = false;
    bool last_layer_cut = false;

    size_t institution_count() const { return institutions.size(); }
};

nn::LossKind loss_for(const nn::Task& task);

/// Builds the initial federation for `cfg`: initializes the (possibly
/// GroupNorm-swapped) network from the "init" stream, splits it at the cut for
/// split strategies, pools the dataset for the centralized baseline, draws the
/// FedAvg+SD shared pool, and seeds every institution's batch stream.
/// The partition is ignored by the centralized baseline.
FedState make_state(const StrategyConfig& cfg, const nn::LayerStack& architecture,
                    const data::Dataset& train, const data::Partition& partition, u64 seed);

// --- epoch/round/iteration procedures (each returns its mean per-sample loss)

double run_centralized_epoch(FedState& s);
double run_fedavg_round(FedState& s);
double run_fedavgm_round(FedState& s);
double run_fedavg_sd_round(FedState& s);
double run_fedsgd_iteration(FedState& s);
double run_cwt_epoch(FedState& s);
double run_splitnn_epoch(FedState& s);
double run_splitavg_round(FedState& s, const fed::RoundPlan& plan);
double run_splitavg_v2_round(FedState& s, const fed::RoundPlan& plan);

/// One epoch of whatever cfg.kind says, appended to the loss curve.
/// Epoch lengths: floor(Q/B) centralized steps; one round for the FedAvg
/// family; ceil(max_k Q_k/B) iterations for FedSGD and SplitAVG (exhausted
/// institutions reshuffle and continue); floor(Q/(B*K)) steps per institution
/// turn for CWT and SplitNN.
void run_epoch(FedState& s);

/// cfg.epochs epochs.
void run_training(FedState& s);

/// Evaluation-ready model(s): join(FI_k, FS) per institution for SplitAVG
/// variants, the traveled composite for SplitNN, the single global model
/// otherwise. Does not touch the ledger.
std::vector<nn::LayerStack> composite_models(const FedState& s);

/// End-of-training weight distribution (split strategies bill the FS
/// broadcast; SplitNN also bills delivering the traveled FI). Returns the
/// composites institutions end up holding.
std::vector<nn::LayerStack> finalize(FedState& s);

/// Accuracy (classification) or MAE (regression) of every composite model on
/// `test`, plus the loss curve and ledger totals.
metrics::Metrics evaluate(const FedState& s, const data::Dataset& test);

/// Closed-form uplink scalar total for cfg.epochs epochs of this state's
/// strategy, derived from per-event analytic counts and the epoch schedule —
/// never from the ledger. Recorded uplink totals must match this exactly.
u64 expected_uplink_scalars(const FedState& s);

} // namespace fedsplit::strat
