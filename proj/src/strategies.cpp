#include "fedsplit/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>

namespace fedsplit::strat {

namespace {

void scale_tensor(Tensor& t, double a) {
    for (double& v : t.vec()) v *= a;
}

void scale_all(std::vector<Tensor>& ts, double a) {
    for (Tensor& t : ts) scale_tensor(t, a);
}

void require_kind(const FedState& s, std::initializer_list<fed::StrategyKind> kinds, const char* op) {
    for (fed::StrategyKind k : kinds) {
        if (s.cfg.kind == k) return;
    }
    throw ConfigError(std::string(op) + " called on a state configured for " +
                      fed::strategy_name(s.cfg.kind));
}

/// One minibatch SGD step of `inst`'s model on its own stream, with the SUM
/// loss normalized by `normalizer` samples. Returns the normalized loss.
double local_sgd_step(FedState& s, fed::InstitutionState& inst, nn::OptimState& optim,
                      double normalizer) {
    const std::vector<size_t> batch = inst.batches.next_batch();
    const data::Dataset mb = s.train.subset(batch);
    nn::Tape tape;
    const Tensor out = inst.model.forward(mb.features, nn::Mode::Train, tape);
    nn::LossResult res = nn::loss(s.loss_kind, out, mb.labels);
    scale_tensor(res.grad, 1.0 / normalizer);
    std::vector<Tensor> grads;
    inst.model.backward(tape, res.grad, grads);
    nn::sgd_step(inst.model.weight_refs(), grads, optim);
    return res.value / normalizer;
}

std::vector<Tensor> weighted_average(const std::vector<std::vector<Tensor>>& states,
                                     const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw ConfigError("aggregation weights must sum to a positive value");
    std::vector<Tensor> avg;
    avg.reserve(states.front().size());
    for (size_t i = 0; i < states.front().size(); ++i) {
        Tensor acc(states.front()[i].shape());
        for (size_t k = 0; k < states.size(); ++k) {
            const double w = weights[k] / total;
            const Tensor& src = states[k][i];
            for (size_t j = 0; j < src.size(); ++j) acc[j] += w * src[j];
        }
        avg.push_back(std::move(acc));
    }
    return avg;
}

/// Shared body of the FedAvg family; cfg.kind selects the aggregation rule.
double fedavg_family_round(FedState& s) {
    const u64 round = s.epoch;
    fed::RoundPlan plan = fed::sample_institutions(s.institution_count(), s.st, s.server.rng, round);

    const std::vector<Tensor> global = s.server.model.state_copy();
    const u64 sync_scalars = s.server.model.state_scalar_count();

    std::vector<std::vector<Tensor>> states;
    std::vector<double> weights;
    double loss_acc = 0.0, weight_acc = 0.0;
    for (size_t k : plan.selected) {
        fed::InstitutionState& inst = s.institutions[k];
        inst.model.set_state(global);
        s.ledger.record(round, fed::Message::full_weights(fed::Direction::Downlink, k, sync_scalars));

        const size_t steps = inst.batches.steps_per_epoch_floor();
        double acc = 0.0;
        for (size_t t = 0; t < steps; ++t) {
            acc += local_sgd_step(s, inst, inst.optim, static_cast<double>(s.cfg.batch));
        }

        s.ledger.record(round, fed::Message::full_weights(fed::Direction::Uplink, k, sync_scalars));
        states.push_back(inst.model.state_copy());
        const double w = static_cast<double>(inst.batches.pool_size());
        weights.push_back(w);
        loss_acc += w * (steps ? acc / static_cast<double>(steps) : 0.0);
        weight_acc += w;
    }

    const std::vector<Tensor> avg = weighted_average(states, weights);
    if (s.cfg.kind == fed::StrategyKind::FedAvgM && s.cfg.server_momentum != 0.0) {
        // momentum over the weight delta; averaged running stats land directly
        const std::vector<Tensor> prev = s.server.model.weights_copy();
        s.server.model.set_state(avg);
        const std::vector<Tensor> avg_w = s.server.model.weights_copy();
        std::vector<Tensor>& vel = s.server.momentum;
        if (vel.empty()) {
            for (const Tensor& w : prev) vel.emplace_back(w.shape());
        }
        std::vector<Tensor> next = prev;
        for (size_t i = 0; i < prev.size(); ++i) {
            for (size_t j = 0; j < prev[i].size(); ++j) {
                vel[i][j] = s.cfg.server_momentum * vel[i][j] + (prev[i][j] - avg_w[i][j]);
                next[i][j] = prev[i][j] - vel[i][j];
            }
            ensure_finite(next[i], "FedAvgM server update");
        }
        s.server.model.set_weights(next);
    } else {
        // FedAvg, FedAvg+SD, and the exact beta=0 degeneration of FedAvgM
        s.server.model.set_state(avg);
    }
    return weight_acc > 0.0 ? loss_acc / weight_acc : 0.0;
}

size_t max_ceil_steps(const FedState& s) {
    size_t iters = 0;
    for (const fed::InstitutionState& inst : s.institutions) {
        iters = std::max(iters, inst.batches.steps_per_epoch_ceil());
    }
    return iters;
}

struct ForwardPart {
    size_t k = 0;
    nn::Tape tape;
    Tensor z;
    Tensor y;
};

/// Phase (a)+(b) of a split iteration: every selected institution forwards one
/// local minibatch through its FI and ships the cut activations up (labels
/// ride along only in the label-sharing variant).
std::vector<ForwardPart> split_forward(FedState& s, const fed::RoundPlan& plan, bool send_labels) {
    std::vector<ForwardPart> parts;
    parts.reserve(plan.selected.size());
    for (size_t k : plan.selected) {
        fed::InstitutionState& inst = s.institutions[k];
        const std::vector<size_t> batch = inst.batches.next_batch();
        data::Dataset mb = s.train.subset(batch);
        ForwardPart p;
        p.k = k;
        p.z = inst.model.forward(mb.features, nn::Mode::Train, p.tape);
        s.ledger.record(s.epoch, fed::Message::feature_maps(k, p.z, send_labels ? &mb.labels : nullptr));
        p.y = std::move(mb.labels);
        parts.push_back(std::move(p));
    }
    return parts;
}

/// Phase (d)+(e): return each institution's gradient slice and step both ends.
double finish_split_iteration(FedState& s, std::vector<ForwardPart>& parts, nn::Tape& server_tape,
                              Tensor& grad, double sum_loss) {
    const size_t b = s.cfg.batch;
    const double norm = static_cast<double>(parts.size()) * static_cast<double>(b);
    scale_tensor(grad, 1.0 / norm);
    std::vector<Tensor> server_grads;
    const Tensor gin = s.server.model.backward(server_tape, grad, server_grads);
    nn::sgd_step(s.server.model.weight_refs(), server_grads, s.server.optim);

    for (size_t i = 0; i < parts.size(); ++i) {
        const size_t k = parts[i].k;
        const Tensor gk = gin.slice_rows(i * b, (i + 1) * b);
        s.ledger.record(s.epoch, fed::Message::cut_gradients(k, gk));
        fed::InstitutionState& inst = s.institutions[k];
        std::vector<Tensor> gi;
        inst.model.backward(parts[i].tape, gk, gi);
        nn::sgd_step(inst.model.weight_refs(), gi, inst.optim);
    }
    return sum_loss / norm;
}

double run_fedsgd_epoch(FedState& s) {
    const size_t iters = max_ceil_steps(s);
    double acc = 0.0;
    for (size_t i = 0; i < iters; ++i) acc += run_fedsgd_iteration(s);
    return iters ? acc / static_cast<double>(iters) : 0.0;
}

double run_splitavg_epoch(FedState& s) {
    const size_t iters = max_ceil_steps(s);
    double acc = 0.0;
    for (size_t i = 0; i < iters; ++i) {
        const fed::RoundPlan plan =
            fed::sample_institutions(s.institution_count(), s.st, s.server.rng, s.epoch);
        acc += s.cfg.kind == fed::StrategyKind::SplitAvgV2 ? run_splitavg_v2_round(s, plan)
                                                           : run_splitavg_round(s, plan);
    }
    return iters ? acc / static_cast<double>(iters) : 0.0;
}

nn::LayerStack with_group_norm(const nn::LayerStack& stack, size_t groups_cfg) {
    std::vector<nn::Layer> layers = stack.layers();
    for (nn::Layer& l : layers) {
        if (l.kind == nn::LayerKind::BatchNorm) {
            const size_t g = groups_cfg == 0 ? std::min<size_t>(32, l.channels) : groups_cfg;
            l = nn::Layer::group_norm(g, l.channels);
        }
    }
    return nn::LayerStack(std::move(layers), stack.input_shape());
}

/// Label-stratified global pool of round(fraction*Q) samples: largest-remainder
/// quota per label bin, then a seeded without-replacement draw within each bin.
std::vector<size_t> draw_shared_pool(const data::Dataset& train, double fraction, Rng rng) {
    const size_t q = train.size();
    const auto target = static_cast<size_t>(std::llround(fraction * static_cast<double>(q)));
    if (target == 0) {
        if (fraction > 0.0) {
            log_info("shared pool of fraction " + std::to_string(fraction) +
                     " rounds to zero samples; continuing as plain FedAvg");
        }
        return {};
    }

    const std::vector<size_t> bins = data::label_bins(train);
    const size_t nbins = data::bin_count(train);
    std::vector<std::vector<size_t>> members(nbins);
    for (size_t i = 0; i < q; ++i) members[bins[i]].push_back(i);

    std::vector<size_t> quota(nbins, 0);
    std::vector<std::pair<double, size_t>> remainder;  // (fractional part, bin)
    size_t assigned = 0;
    for (size_t b = 0; b < nbins; ++b) {
        const double exact =
            static_cast<double>(target) * static_cast<double>(members[b].size()) / static_cast<double>(q);
        quota[b] = std::min(static_cast<size_t>(exact), members[b].size());
        assigned += quota[b];
        remainder.emplace_back(exact - static_cast<double>(quota[b]), b);
    }
    std::stable_sort(remainder.begin(), remainder.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [frac, b] : remainder) {
        if (assigned >= target) break;
        if (quota[b] < members[b].size()) {
            ++quota[b];
            ++assigned;
        }
    }
    for (size_t b = 0; assigned < target && b < nbins; ++b) {
        while (assigned < target && quota[b] < members[b].size()) {
            ++quota[b];
            ++assigned;
        }
    }

    std::vector<size_t> pool;
    pool.reserve(target);
    for (size_t b = 0; b < nbins; ++b) {
        if (quota[b] == 0) continue;
        for (size_t pick : rng.sample_without_replacement(members[b].size(), quota[b])) {
            pool.push_back(members[b][pick]);
        }
    }
    std::sort(pool.begin(), pool.end());
    return pool;
}

} // namespace

void StrategyConfig::validate() const {
    if (batch < 1) throw ConfigError("batch must be at least 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be nonnegative and finite");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
    if (server_momentum < 0.0 || server_momentum >= 1.0) {
        throw ConfigError("server_momentum must lie in [0,1)");
    }
    if (!(shared_fraction >= 0.0) || shared_fraction > 1.0) {
        throw ConfigError("shared_fraction must lie in [0,1]");
    }
}

nn::LossKind loss_for(const nn::Task& task) {
    return task.kind == nn::TaskKind::Classification ? nn::LossKind::CrossEntropy : nn::LossKind::L1;
}

FedState make_state(const StrategyConfig& cfg, const nn::LayerStack& architecture,
                    const data::Dataset& train, const data::Partition& partition, u64 seed) {
    cfg.validate();
    train.validate();

    FedState s;
    s.cfg = cfg;
    s.task = train.task;
    s.loss_kind = loss_for(train.task);
    s.train = train;

    const bool central = cfg.kind == fed::StrategyKind::Centralized;
    const size_t k_count = central ? 1 : partition.institutions();
    if (!central) {
        if (k_count == 0) throw ConfigError("partition has no institutions");
        partition.validate(train.size());
    }
    s.st = central ? 1 : (cfg.participating == 0 ? k_count : cfg.participating);
    if (s.st > k_count) {
        throw ConfigError("participating=" + std::to_string(s.st) + " exceeds the " +
                          std::to_string(k_count) + " partition institutions");
    }
    if ((cfg.kind == fed::StrategyKind::CWT || cfg.kind == fed::StrategyKind::SplitNN) &&
        s.st != k_count) {
        throw ConfigError(std::string(fed::strategy_name(cfg.kind)) +
                          " trains every institution each epoch; participating must be 0 or K");
    }

    nn::LayerStack full = cfg.kind == fed::StrategyKind::FedSgdGN
                              ? with_group_norm(architecture, cfg.gn_groups)
                              : architecture;
    if (full.output_width() != s.task.output_width()) {
        throw ConfigError("model output width " + std::to_string(full.output_width()) +
                          " does not match " + s.task.name() + " target width " +
                          std::to_string(s.task.output_width()));
    }

    Rng master(seed);
    Rng init = master.child("init");
    full.init_weights(init);
    s.full_model = full;

    s.split_mode = fed::is_split_strategy(cfg.kind);
    nn::LayerStack fi_proto;
    if (s.split_mode) {
        nn::SubNetworks parts = nn::split(full, cfg.cut);
        s.last_layer_cut = parts.last_layer_cut;
        s.server.model = std::move(parts.fs);
        fi_proto = std::move(parts.fi);
        if (cfg.kind == fed::StrategyKind::SplitNN) {
            s.traveling_fi = fi_proto;
            s.traveling_optim = nn::OptimState(cfg.lr, cfg.momentum);
        }
    } else {
        s.server.model = full;
    }
    s.server.optim = nn::OptimState(cfg.lr, cfg.momentum);
    s.server.rng = master.child("sample");

    std::vector<size_t> shared;
    if (cfg.kind == fed::StrategyKind::FedAvgSD) {
        shared = draw_shared_pool(train, cfg.shared_fraction, master.child("shared"));
        s.server.shared_pool = shared;
    }

    for (size_t k = 0; k < k_count; ++k) {
        fed::InstitutionState inst;
        inst.id = k;
        inst.model = s.split_mode ? fi_proto : full;
        inst.optim = nn::OptimState(cfg.lr, cfg.momentum);
        if (central) {
            inst.indices.resize(train.size());
            std::iota(inst.indices.begin(), inst.indices.end(), size_t{0});
        } else {
            inst.indices = partition.assignments[k];
        }
        if (!shared.empty()) {
            std::vector<size_t> local = inst.indices;
            std::sort(local.begin(), local.end());
            std::vector<size_t> merged;
            std::set_union(local.begin(), local.end(), shared.begin(), shared.end(),
                           std::back_inserter(merged));
            inst.indices = std::move(merged);
        }
        inst.batches = fed::BatchIterator(inst.indices, cfg.batch, master.child("batch", k));
        s.institutions.push_back(std::move(inst));
    }
    return s;
}

double run_centralized_epoch(FedState& s) {
    require_kind(s, {fed::StrategyKind::Centralized}, "run_centralized_epoch");
    fed::InstitutionState& inst = s.institutions.front();
    const size_t steps = inst.batches.steps_per_epoch_floor();
    double acc = 0.0;
    for (size_t t = 0; t < steps; ++t) {
        acc += local_sgd_step(s, inst, inst.optim, static_cast<double>(s.cfg.batch));
    }
    return steps ? acc / static_cast<double>(steps) : 0.0;
}

double run_fedavg_round(FedState& s) {
    require_kind(s, {fed::StrategyKind::FedAvg}, "run_fedavg_round");
    return fedavg_family_round(s);
}

double run_fedavgm_round(FedState& s) {
    require_kind(s, {fed::StrategyKind::FedAvgM}, "run_fedavgm_round");
    return fedavg_family_round(s);
}

double run_fedavg_sd_round(FedState& s) {
    require_kind(s, {fed::StrategyKind::FedAvgSD}, "run_fedavg_sd_round");
    return fedavg_family_round(s);
}

double run_fedsgd_iteration(FedState& s) {
    require_kind(s, {fed::StrategyKind::FedSgd, fed::StrategyKind::FedSgdGN}, "run_fedsgd_iteration");
    const u64 round = s.epoch;
    const fed::RoundPlan plan =
        fed::sample_institutions(s.institution_count(), s.st, s.server.rng, round);

    const std::vector<Tensor> global_w = s.server.model.weights_copy();
    const u64 params = s.server.model.parameter_count();

    std::vector<Tensor> grad_sum;
    double loss_acc = 0.0;
    for (size_t k : plan.selected) {
        fed::InstitutionState& inst = s.institutions[k];
        inst.model.set_weights(global_w);
        s.ledger.record(round, fed::Message::full_weights(fed::Direction::Downlink, k, params));

        const std::vector<size_t> batch = inst.batches.next_batch();
        const data::Dataset mb = s.train.subset(batch);
        nn::Tape tape;
        const Tensor out = inst.model.forward(mb.features, nn::Mode::Train, tape);
        const nn::LossResult res = nn::loss(s.loss_kind, out, mb.labels);
        std::vector<Tensor> grads;
        inst.model.backward(tape, res.grad, grads);
        s.ledger.record(round, fed::Message::full_gradients(k, params));

        if (grad_sum.empty()) {
            grad_sum = std::move(grads);
        } else {
            for (size_t i = 0; i < grad_sum.size(); ++i) {
                for (size_t j = 0; j < grad_sum[i].size(); ++j) grad_sum[i][j] += grads[i][j];
            }
        }
        loss_acc += res.value;
    }

    const double norm =
        static_cast<double>(plan.selected.size()) * static_cast<double>(s.cfg.batch);
    scale_all(grad_sum, 1.0 / norm);
    nn::sgd_step(s.server.model.weight_refs(), grad_sum, s.server.optim);
    return loss_acc / norm;
}

double run_cwt_epoch(FedState& s) {
    require_kind(s, {fed::StrategyKind::CWT}, "run_cwt_epoch");
    const u64 round = s.epoch;
    const size_t k_count = s.institution_count();
    const size_t steps_per_turn = s.train.size() / (s.cfg.batch * k_count);
    const u64 sync_scalars = s.server.model.state_scalar_count();

    double acc = 0.0;
    size_t steps_total = 0;
    for (size_t k = 0; k < k_count; ++k) {
        fed::InstitutionState& inst = s.institutions[k];
        inst.model.set_state(s.server.model.state_copy());
        s.ledger.record(round, fed::Message::full_weights(fed::Direction::Downlink, k, sync_scalars));
        for (size_t t = 0; t < steps_per_turn; ++t) {
            // the traveling optimizer state rides with the weights: momentum
            // buffers live in server.optim and pass from turn to turn unbilled
            acc += local_sgd_step(s, inst, s.server.optim, static_cast<double>(s.cfg.batch));
            ++steps_total;
        }
        s.server.model.set_state(inst.model.state_copy());
        s.ledger.record(round, fed::Message::full_weights(fed::Direction::Uplink, k, sync_scalars));
    }
    return steps_total ? acc / static_cast<double>(steps_total) : 0.0;
}

double run_splitnn_epoch(FedState& s) {
    require_kind(s, {fed::StrategyKind::SplitNN}, "run_splitnn_epoch");
    const u64 round = s.epoch;
    const size_t k_count = s.institution_count();
    const size_t b = s.cfg.batch;
    const size_t steps_per_turn = s.train.size() / (b * k_count);
    const u64 fi_sync = s.traveling_fi.state_scalar_count();

    double acc = 0.0;
    size_t steps_total = 0;
    for (size_t k = 0; k < k_count; ++k) {
        fed::InstitutionState& inst = s.institutions[k];
        inst.model.set_state(s.traveling_fi.state_copy());
        s.ledger.record(round, fed::Message::full_weights(fed::Direction::Downlink, k, fi_sync));

        for (size_t t = 0; t < steps_per_turn; ++t) {
            const std::vector<size_t> batch = inst.batches.next_batch();
            const data::Dataset mb = s.train.subset(batch);

            nn::Tape tape_i;
            const Tensor z = inst.model.forward(mb.features, nn::Mode::Train, tape_i);
            s.ledger.record(round, fed::Message::feature_maps(k, z, &mb.labels));

            nn::Tape tape_s;
            const Tensor preds = s.server.model.forward(z, nn::Mode::Train, tape_s);
            nn::LossResult res = nn::loss(s.loss_kind, preds, mb.labels);
            scale_tensor(res.grad, 1.0 / static_cast<double>(b));

            std::vector<Tensor> gs;
            const Tensor gcut = s.server.model.backward(tape_s, res.grad, gs);
            nn::sgd_step(s.server.model.weight_refs(), gs, s.server.optim);
            s.ledger.record(round, fed::Message::cut_gradients(k, gcut));

            std::vector<Tensor> gi;
            inst.model.backward(tape_i, gcut, gi);
            nn::sgd_step(inst.model.weight_refs(), gi, s.traveling_optim);

            acc += res.value / static_cast<double>(b);
            ++steps_total;
        }

        s.traveling_fi.set_state(inst.model.state_copy());
        s.ledger.record(round, fed::Message::full_weights(fed::Direction::Uplink, k, fi_sync));
    }
    return steps_total ? acc / static_cast<double>(steps_total) : 0.0;
}

double run_splitavg_round(FedState& s, const fed::RoundPlan& plan) {
    require_kind(s, {fed::StrategyKind::SplitAvg}, "run_splitavg_round");
    if (plan.selected.empty()) throw ConfigError("empty round plan");
    std::vector<ForwardPart> parts = split_forward(s, plan, /*send_labels=*/true);

    std::vector<Tensor> zs, ys;
    for (const ForwardPart& p : parts) {
        zs.push_back(p.z);
        ys.push_back(p.y);
    }
    nn::Tape server_tape;
    const Tensor preds = s.server.model.forward(concat_batch(zs), nn::Mode::Train, server_tape);
    nn::LossResult res = nn::loss(s.loss_kind, preds, concat_batch(ys));
    return finish_split_iteration(s, parts, server_tape, res.grad, res.value);
}

double run_splitavg_v2_round(FedState& s, const fed::RoundPlan& plan) {
    require_kind(s, {fed::StrategyKind::SplitAvgV2}, "run_splitavg_v2_round");
    if (plan.selected.empty()) throw ConfigError("empty round plan");
    std::vector<ForwardPart> parts = split_forward(s, plan, /*send_labels=*/false);

    std::vector<Tensor> zs;
    for (const ForwardPart& p : parts) zs.push_back(p.z);
    nn::Tape server_tape;
    const Tensor preds = s.server.model.forward(concat_batch(zs), nn::Mode::Train, server_tape);

    // prediction chunks travel down; loss values and gradient chunks travel up
    const size_t b = s.cfg.batch;
    std::vector<Tensor> chunk_grads;
    chunk_grads.reserve(parts.size());
    double total = 0.0;
    for (size_t i = 0; i < parts.size(); ++i) {
        const size_t k = parts[i].k;
        const Tensor chunk = preds.slice_rows(i * b, (i + 1) * b);
        s.ledger.record(s.epoch, fed::Message::prediction_chunk(k, chunk));
        nn::LossResult res = nn::loss(s.loss_kind, chunk, parts[i].y);
        s.ledger.record(s.epoch, fed::Message::chunk_gradients(k, res.grad));
        s.ledger.record(s.epoch, fed::Message::loss_scalar(k));
        total += res.value;
        chunk_grads.push_back(std::move(res.grad));
    }

    Tensor grad = concat_batch(chunk_grads);
    return finish_split_iteration(s, parts, server_tape, grad, total);
}

void run_epoch(FedState& s) {
    double mean_loss = 0.0;
    switch (s.cfg.kind) {
        case fed::StrategyKind::Centralized: mean_loss = run_centralized_epoch(s); break;
        case fed::StrategyKind::FedAvg: mean_loss = run_fedavg_round(s); break;
        case fed::StrategyKind::FedAvgM: mean_loss = run_fedavgm_round(s); break;
        case fed::StrategyKind::FedAvgSD: mean_loss = run_fedavg_sd_round(s); break;
        case fed::StrategyKind::FedSgd:
        case fed::StrategyKind::FedSgdGN: mean_loss = run_fedsgd_epoch(s); break;
        case fed::StrategyKind::CWT: mean_loss = run_cwt_epoch(s); break;
        case fed::StrategyKind::SplitNN: mean_loss = run_splitnn_epoch(s); break;
        case fed::StrategyKind::SplitAvg:
        case fed::StrategyKind::SplitAvgV2: mean_loss = run_splitavg_epoch(s); break;
    }
    s.loss_curve.push_back(mean_loss);
    ++s.epoch;
}

void run_training(FedState& s) {
    for (size_t e = 0; e < s.cfg.epochs; ++e) run_epoch(s);
}

std::vector<nn::LayerStack> composite_models(const FedState& s) {
    std::vector<nn::LayerStack> out;
    switch (s.cfg.kind) {
        case fed::StrategyKind::SplitAvg:
        case fed::StrategyKind::SplitAvgV2:
            for (const fed::InstitutionState& inst : s.institutions) {
                out.push_back(nn::join(nn::SubNetworks{inst.model, s.server.model, s.last_layer_cut}));
            }
            break;
        case fed::StrategyKind::SplitNN:
            out.push_back(nn::join(nn::SubNetworks{s.traveling_fi, s.server.model, s.last_layer_cut}));
            break;
        case fed::StrategyKind::Centralized:
            out.push_back(s.institutions.front().model);
            break;
        default:
            out.push_back(s.server.model);
    }
    return out;
}

std::vector<nn::LayerStack> finalize(FedState& s) {
    const u64 round = s.epoch;
    switch (s.cfg.kind) {
        case fed::StrategyKind::SplitAvg:
        case fed::StrategyKind::SplitAvgV2: {
            std::vector<nn::LayerStack> fis;
            fis.reserve(s.institution_count());
            for (const fed::InstitutionState& inst : s.institutions) fis.push_back(inst.model);
            return fed::final_weight_transfer(s.server.model, fis, s.ledger, round);
        }
        case fed::StrategyKind::SplitNN: {
            // the traveled FI is delivered to every institution alongside FS
            const u64 fi_sync = s.traveling_fi.state_scalar_count();
            std::vector<nn::LayerStack> fis;
            fis.reserve(s.institution_count());
            for (size_t k = 0; k < s.institution_count(); ++k) {
                s.ledger.record(round, fed::Message::full_weights(fed::Direction::Downlink, k, fi_sync));
                s.institutions[k].model.set_state(s.traveling_fi.state_copy());
                fis.push_back(s.traveling_fi);
            }
            return fed::final_weight_transfer(s.server.model, fis, s.ledger, round);
        }
        default:
            return composite_models(s);
    }
}

metrics::Metrics evaluate(const FedState& s, const data::Dataset& test) {
    test.validate();
    if (test.task.kind != s.task.kind ||
        (s.task.kind == nn::TaskKind::Classification && test.task.classes != s.task.classes)) {
        throw ConfigError(std::string("test task (") + test.task.name() +
                          ") does not match the training task (" + s.task.name() + ")");
    }

    metrics::Metrics m;
    m.task = s.task.kind;
    std::vector<nn::LayerStack> models = composite_models(s);
    double sum = 0.0;
    for (nn::LayerStack& model : models) {
        const Tensor preds = model.predict(test.features);
        const double v = s.task.kind == nn::TaskKind::Classification
                             ? metrics::accuracy(preds, test.labels)
                             : metrics::mean_absolute_error(preds, test.labels);
        m.per_institution.push_back(v);
        sum += v;
    }
    m.value = sum / static_cast<double>(models.size());
    m.loss_curve = s.loss_curve;
    m.uplink_scalars = s.ledger.total(fed::Direction::Uplink);
    m.downlink_scalars = s.ledger.total(fed::Direction::Downlink);
    m.uplink_label_scalars = s.ledger.label_scalars(fed::Direction::Uplink);
    return m;
}

u64 expected_uplink_scalars(const FedState& s) {
    const StrategyConfig& cfg = s.cfg;
    const u64 e = cfg.epochs;
    const u64 k_count = s.institution_count();
    const u64 per_event =
        fed::analytic_uplink_floats(cfg.kind, s.full_model, cfg.batch, s.st, cfg.cut);
    switch (cfg.kind) {
        case fed::StrategyKind::Centralized:
            return 0;
        case fed::StrategyKind::FedAvg:
        case fed::StrategyKind::FedAvgM:
        case fed::StrategyKind::FedAvgSD:
            return e * static_cast<u64>(s.st) * per_event;
        case fed::StrategyKind::FedSgd:
        case fed::StrategyKind::FedSgdGN:
            return e * static_cast<u64>(max_ceil_steps(s)) * static_cast<u64>(s.st) * per_event;
        case fed::StrategyKind::CWT:
            return e * k_count * per_event;
        case fed::StrategyKind::SplitNN: {
            const u64 steps =
                static_cast<u64>(s.train.size() / (cfg.batch * k_count)) * k_count;
            return e * (steps * per_event + k_count * s.traveling_fi.state_scalar_count());
        }
        case fed::StrategyKind::SplitAvg:
        case fed::StrategyKind::SplitAvgV2:
            return e * static_cast<u64>(max_ceil_steps(s)) * per_event;
    }
    throw ConfigError("unknown strategy kind");
}

} // namespace fedsplit::strat
