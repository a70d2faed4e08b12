#include "fedsplit/federation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace fedsplit::fed {

const char* strategy_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::Centralized: return "centralized";
        case StrategyKind::FedAvg: return "fedavg";
        case StrategyKind::FedSgd: return "fedsgd";
        case StrategyKind::FedAvgM: return "fedavgm";
        case StrategyKind::FedAvgSD: return "fedavg_sd";
        case StrategyKind::FedSgdGN: return "fedsgd_gn";
        case StrategyKind::CWT: return "cwt";
        case StrategyKind::SplitNN: return "splitnn";
        case StrategyKind::SplitAvg: return "splitavg";
        case StrategyKind::SplitAvgV2: return "splitavg_v2";
    }
    return "?";
}

StrategyKind strategy_from_name(const std::string& name) {
    for (StrategyKind k : {StrategyKind::Centralized, StrategyKind::FedAvg, StrategyKind::FedSgd,
                           StrategyKind::FedAvgM, StrategyKind::FedAvgSD, StrategyKind::FedSgdGN,
                           StrategyKind::CWT, StrategyKind::SplitNN, StrategyKind::SplitAvg,
                           StrategyKind::SplitAvgV2}) {
        if (name == strategy_name(k)) return k;
    }
    throw ConfigError("unknown strategy '" + name +
                      "' (expected one of: centralized fedavg fedsgd fedavgm fedavg_sd fedsgd_gn cwt "
                      "splitnn splitavg splitavg_v2)");
}

bool is_split_strategy(StrategyKind kind) {
    return kind == StrategyKind::SplitNN || kind == StrategyKind::SplitAvg ||
           kind == StrategyKind::SplitAvgV2;
}

const char* direction_name(Direction d) {
    return d == Direction::Uplink ? "uplink" : "downlink";
}

const char* message_kind_name(MessageKind k) {
    switch (k) {
        case MessageKind::FeatureMaps: return "feature_maps";
        case MessageKind::CutGradients: return "cut_gradients";
        case MessageKind::FullWeights: return "full_weights";
        case MessageKind::FullGradients: return "full_gradients";
        case MessageKind::PredictionChunk: return "prediction_chunk";
        case MessageKind::ChunkGradients: return "chunk_gradients";
        case MessageKind::LossScalar: return "loss_scalar";
    }
    return "?";
}

Message Message::feature_maps(size_t institution, const Tensor& x, const Tensor* labels) {
    Message m;
    m.kind = MessageKind::FeatureMaps;
    m.direction = Direction::Uplink;
    m.origin = institution;
    m.destination = kServer;
    m.scalar_count = x.size() + (labels != nullptr ? labels->size() : 0);
    m.label_scalars = labels != nullptr ? labels->size() : 0;
    return m;
}

Message Message::cut_gradients(size_t institution, const Tensor& g) {
    Message m;
    m.kind = MessageKind::CutGradients;
    m.direction = Direction::Downlink;
    m.origin = kServer;
    m.destination = institution;
    m.scalar_count = g.size();
    return m;
}

Message Message::full_weights(Direction dir, size_t institution, u64 scalars) {
    Message m;
    m.kind = MessageKind::FullWeights;
    m.direction = dir;
    m.origin = dir == Direction::Uplink ? institution : kServer;
    m.destination = dir == Direction::Uplink ? kServer : institution;
    m.scalar_count = scalars;
    return m;
}

Message Message::full_gradients(size_t institution, u64 scalars) {
    Message m;
    m.kind = MessageKind::FullGradients;
    m.direction = Direction::Uplink;
    m.origin = institution;
    m.destination = kServer;
    m.scalar_count = scalars;
    return m;
}

Message Message::prediction_chunk(size_t institution, const Tensor& chunk) {
    Message m;
    m.kind = MessageKind::PredictionChunk;
    m.direction = Direction::Downlink;
    m.origin = kServer;
    m.destination = institution;
    m.scalar_count = chunk.size();
    return m;
}

Message Message::chunk_gradients(size_t institution, const Tensor& g) {
    Message m;
    m.kind = MessageKind::ChunkGradients;
    m.direction = Direction::Uplink;
    m.origin = institution;
    m.destination = kServer;
    m.scalar_count = g.size();
    return m;
}

Message Message::loss_scalar(size_t institution) {
    Message m;
    m.kind = MessageKind::LossScalar;
    m.direction = Direction::Uplink;
    m.origin = institution;
    m.destination = kServer;
    m.scalar_count = 1;
    return m;
}

void CommLedger::record(u64 round, const Message& m) {
    if (m.label_scalars > m.scalar_count) {
        throw ConfigError("message label scalars exceed its payload scalar count");
    }
    if (m.kind == MessageKind::LossScalar && m.scalar_count != 1) {
        throw ConfigError("loss scalar message must carry exactly one value");
    }
    Cell& c = cells_[{round, static_cast<int>(m.direction), static_cast<int>(m.kind)}];
    c.scalars += m.scalar_count;
    c.labels += m.label_scalars;
    c.messages += 1;
    total_ += m.scalar_count;
    messages_ += 1;
}

u64 CommLedger::total(Direction dir) const {
    u64 n = 0;
    for (const auto& [key, cell] : cells_)
        if (std::get<1>(key) == static_cast<int>(dir)) n += cell.scalars;
    return n;
}

u64 CommLedger::total(Direction dir, MessageKind kind) const {
    u64 n = 0;
    for (const auto& [key, cell] : cells_)
        if (std::get<1>(key) == static_cast<int>(dir) && std::get<2>(key) == static_cast<int>(kind))
            n += cell.scalars;
    return n;
}

u64 CommLedger::round_total(u64 round, Direction dir) const {
    u64 n = 0;
    for (const auto& [key, cell] : cells_)
        if (std::get<0>(key) == round && std::get<1>(key) == static_cast<int>(dir)) n += cell.scalars;
    return n;
}

u64 CommLedger::label_scalars(Direction dir) const {
    u64 n = 0;
    for (const auto& [key, cell] : cells_)
        if (std::get<1>(key) == static_cast<int>(dir)) n += cell.labels;
    return n;
}

void CommLedger::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    f << "round,direction,variant,messages,scalars,label_scalars\n";
    for (const auto& [key, cell] : cells_) {
        f << std::get<0>(key) << "," << direction_name(static_cast<Direction>(std::get<1>(key))) << ","
          << message_kind_name(static_cast<MessageKind>(std::get<2>(key))) << "," << cell.messages << ","
          << cell.scalars << "," << cell.labels << "\n";
    }
    if (!f) throw ConfigError("failed writing " + path);
}

std::string CommLedger::to_json() const {
    nlohmann::json by_variant = nlohmann::json::object();
    for (const auto& [key, cell] : cells_) {
        const std::string name = std::string(direction_name(static_cast<Direction>(std::get<1>(key)))) +
                                 "." + message_kind_name(static_cast<MessageKind>(std::get<2>(key)));
        by_variant[name] = by_variant.value(name, u64{0}) + cell.scalars;
    }
    nlohmann::json j;
    j["total_scalars"] = total_;
    j["uplink_scalars"] = total(Direction::Uplink);
    j["downlink_scalars"] = total(Direction::Downlink);
    j["uplink_label_scalars"] = label_scalars(Direction::Uplink);
    j["messages"] = messages_;
    j["by_variant"] = by_variant;
    return j.dump(2);
}

RoundPlan sample_institutions(size_t k, size_t st, Rng& rng, u64 round) {
    if (st == 0 || st > k) {
        throw ConfigError("cannot sample " + std::to_string(st) + " of " + std::to_string(k) +
                          " institutions");
    }
    RoundPlan plan;
    plan.round = round;
    plan.selected = rng.sample_without_replacement(k, st);
    return plan;
}

BatchIterator::BatchIterator(std::vector<size_t> indices, size_t batch_size, Rng rng)
    : order_(std::move(indices)), batch_(batch_size), rng_(rng) {
    if (order_.empty()) throw ConfigError("batch iterator needs a nonempty index pool");
    if (batch_ == 0) throw ConfigError("batch size must be positive");
    std::sort(order_.begin(), order_.end());
    reshuffle();
}

void BatchIterator::reshuffle() {
    rng_.shuffle(order_);
    pos_ = 0;
}

std::vector<size_t> BatchIterator::next_batch() {
    std::vector<size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
        if (pos_ == order_.size()) reshuffle();
        out.push_back(order_[pos_++]);
    }
    return out;
}

u64 analytic_uplink_floats(StrategyKind kind, const nn::LayerStack& full_model, size_t batch, size_t st,
                           nn::CutSpec cut) {
    const u64 b = batch;
    switch (kind) {
        case StrategyKind::Centralized:
            return 0;
        case StrategyKind::FedAvg:
        case StrategyKind::FedAvgM:
        case StrategyKind::FedAvgSD:
        case StrategyKind::CWT:
            return full_model.state_scalar_count();
        case StrategyKind::FedSgd:
        case StrategyKind::FedSgdGN:
            return full_model.parameter_count();
        case StrategyKind::SplitNN: {
            const auto parts = nn::split(full_model, cut);
            return b * parts.fi.output_width() + b;  // cut maps + labels, one institution
        }
        case StrategyKind::SplitAvg: {
            const auto parts = nn::split(full_model, cut);
            return static_cast<u64>(st) * (b * parts.fi.output_width() + b);
        }
        case StrategyKind::SplitAvgV2: {
            const auto parts = nn::split(full_model, cut);
            return static_cast<u64>(st) *
                   (b * parts.fi.output_width() + b * full_model.output_width() + 1);
        }
    }
    throw ConfigError("unknown strategy in analytic_uplink_floats");
}

std::vector<nn::LayerStack> final_weight_transfer(const nn::LayerStack& fs,
                                                  const std::vector<nn::LayerStack>& fis,
                                                  CommLedger& ledger, u64 round) {
    std::vector<nn::LayerStack> composites;
    composites.reserve(fis.size());
    for (size_t k = 0; k < fis.size(); ++k) {
        ledger.record(round, Message::full_weights(Direction::Downlink, k, fs.state_scalar_count()));
        composites.push_back(nn::join(nn::SubNetworks{fis[k], fs, fs.depth() == 0}));
    }
    return composites;
}

} // namespace fedsplit::fed
