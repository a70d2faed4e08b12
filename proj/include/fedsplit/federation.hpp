#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedsplit/optim.hpp"
#include "fedsplit/rng.hpp"
#include "fedsplit/stack.hpp"

namespace fedsplit::fed {

// ---------------------------------------------------------------------------
// The ten training procedures. Lives here (below the strategies module) so the
// communication formulas can name strategies without a dependency cycle.
// ---------------------------------------------------------------------------

enum class StrategyKind {
    Centralized,
    FedAvg,
    FedSgd,
    FedAvgM,
    FedAvgSD,
    FedSgdGN,
    CWT,
    SplitNN,
    SplitAvg,
    SplitAvgV2,
};

const char* strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);
bool is_split_strategy(StrategyKind kind);

// ---------------------------------------------------------------------------
// Boundary messages. Every scalar crossing the institution<->server boundary
// is carried by one of these variants; factories compute the exact payload
// scalar count (labels are counted separately so label privacy is auditable).
// ---------------------------------------------------------------------------

enum class Direction { Uplink, Downlink };  // institution->server, server->institution

enum class MessageKind {
    FeatureMaps,
    CutGradients,
    FullWeights,
    FullGradients,
    PredictionChunk,
    ChunkGradients,
    LossScalar,
};

const char* direction_name(Direction d);
const char* message_kind_name(MessageKind k);

constexpr size_t kServer = static_cast<size_t>(-1);

struct Message {
    MessageKind kind = MessageKind::LossScalar;
    Direction direction = Direction::Uplink;
    size_t origin = kServer;
    size_t destination = kServer;
    u64 scalar_count = 0;
    u64 label_scalars = 0;  // portion of scalar_count that is raw labels

    /// Cut-layer activations up to the server; pass labels=nullptr for the
    /// label-private variant.
    static Message feature_maps(size_t institution, const Tensor& x, const Tensor* labels);
    static Message cut_gradients(size_t institution, const Tensor& g);
    static Message full_weights(Direction dir, size_t institution, u64 scalars);
    static Message full_gradients(size_t institution, u64 scalars);
    static Message prediction_chunk(size_t institution, const Tensor& chunk);
    static Message chunk_gradients(size_t institution, const Tensor& g);
    static Message loss_scalar(size_t institution);
};

// ---------------------------------------------------------------------------
// Append-only accounting of communicated scalars, keyed by
// (round, direction, message kind).
// ---------------------------------------------------------------------------

class CommLedger {
public:
    void record(u64 round, const Message& m);

    u64 total() const { return total_; }
    u64 total(Direction dir) const;
    u64 total(Direction dir, MessageKind kind) const;
    u64 round_total(u64 round, Direction dir) const;
    u64 label_scalars(Direction dir) const;
    u64 message_count() const { return messages_; }

    void write_csv(const std::string& path) const;
    std::string to_json() const;

private:
    struct Cell {
        u64 scalars = 0;
        u64 labels = 0;
        u64 messages = 0;
    };
    std::map<std::tuple<u64, int, int>, Cell> cells_;
    u64 total_ = 0;
    u64 messages_ = 0;
};

// ---------------------------------------------------------------------------
// Round planning and per-institution batch streams.
// ---------------------------------------------------------------------------

struct RoundPlan {
    std::vector<size_t> selected;  // ascending institution ids
    u64 round = 0;
};

/// Uniform sample of St distinct institutions out of K, ascending order.
RoundPlan sample_institutions(size_t k, size_t st, Rng& rng, u64 round);

/// Endless minibatch stream over a fixed index pool: a seeded permutation that
/// reshuffles and continues whenever it runs out, so any batch size works even
/// when it exceeds the pool. Indices are sorted before the first shuffle, so
/// equal index SETS produce equal streams.
class BatchIterator {
public:
    BatchIterator() = default;
    BatchIterator(std::vector<size_t> indices, size_t batch_size, Rng rng);

    std::vector<size_t> next_batch();
    size_t pool_size() const { return order_.size(); }
    size_t batch_size() const { return batch_; }
    size_t steps_per_epoch_floor() const { return order_.size() / batch_; }
    size_t steps_per_epoch_ceil() const { return (order_.size() + batch_ - 1) / batch_; }

private:
    void reshuffle();

    std::vector<size_t> order_;
    size_t batch_ = 1;
    size_t pos_ = 0;
    Rng rng_{0};
};

// ---------------------------------------------------------------------------
// Simulation state held by each party.
// ---------------------------------------------------------------------------

struct InstitutionState {
    size_t id = 0;
    nn::LayerStack model;  // FI for split strategies, the full network otherwise
    nn::OptimState optim;
    std::vector<size_t> indices;
    BatchIterator batches;
};

struct ServerState {
    nn::LayerStack model;  // FS for split strategies, the global network otherwise
    nn::OptimState optim;
    std::vector<Tensor> momentum;     // FedAvgM server velocity (trainable weights only)
    std::vector<size_t> shared_pool;  // FedAvg+SD global pool
    Rng rng{0};
};

/// Per-sync uplink scalar count for one synchronization event of the given
/// strategy:
///   weight syncs (FedAvg family, CWT, SplitNN hand-off): one institution's
///     weight upload = state scalar count (== parameter count without norms);
///   FedSGD/FedSGD+GN: one institution's gradient upload = parameter count;
///   SplitAVG: one iteration across all St institutions = St*(B*cutmap + B);
///   SplitAVG-v2: one iteration = St*(B*cutmap + B*pred_width + 1);
///   SplitNN per-iteration part: B*cutmap + B;
///   Centralized: 0.
u64 analytic_uplink_floats(StrategyKind kind, const nn::LayerStack& full_model, size_t batch, size_t st,
                           nn::CutSpec cut);

/// Sends the server sub-network to every institution (one weights message
/// each) and returns the rejoined per-institution composites.
std::vector<nn::LayerStack> final_weight_transfer(const nn::LayerStack& fs,
                                                  const std::vector<nn::LayerStack>& fis,
                                                  CommLedger& ledger, u64 round);

} // namespace fedsplit::fed
