#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fedsplit/federation.hpp"

using namespace fedsplit;
using namespace fedsplit::fed;

TEST_CASE("feature-map messages count every payload scalar, labels included") {
    const Tensor x({32, 8, 14, 14});
    const Tensor y({32});
    const Message m = Message::feature_maps(2, x, &y);
    CHECK(m.scalar_count == 32 * 8 * 14 * 14 + 32);  // product of dims plus labels
    CHECK(m.label_scalars == 32);
    CHECK(m.direction == Direction::Uplink);
    CHECK(m.origin == 2);

    const Message bare = Message::feature_maps(2, x, nullptr);
    CHECK(bare.scalar_count == 32 * 8 * 14 * 14);
    CHECK(bare.label_scalars == 0);
}

TEST_CASE("remaining message factories carry exact element counts") {
    CHECK(Message::cut_gradients(1, Tensor({4, 6})).scalar_count == 24);
    CHECK(Message::cut_gradients(1, Tensor({4, 6})).direction == Direction::Downlink);
    CHECK(Message::full_weights(Direction::Uplink, 0, 58).scalar_count == 58);
    CHECK(Message::full_weights(Direction::Downlink, 3, 0).scalar_count == 0);  // empty payload is legal
    CHECK(Message::full_gradients(1, 99).scalar_count == 99);
    CHECK(Message::prediction_chunk(0, Tensor({32, 2})).scalar_count == 64);
    CHECK(Message::prediction_chunk(0, Tensor({32, 2})).direction == Direction::Downlink);
    CHECK(Message::chunk_gradients(0, Tensor({32, 2})).direction == Direction::Uplink);
    CHECK(Message::loss_scalar(3).scalar_count == 1);
}

TEST_CASE("the ledger accumulates by round, direction, and variant") {
    CommLedger ledger;
    const Tensor x({2, 3});
    const Tensor y({2});
    ledger.record(0, Message::feature_maps(0, x, &y));
    ledger.record(0, Message::feature_maps(1, x, &y));
    ledger.record(0, Message::cut_gradients(0, x));
    ledger.record(1, Message::feature_maps(0, x, &y));

    CHECK(ledger.total() == 8 + 8 + 6 + 8);
    CHECK(ledger.total(Direction::Uplink) == 24);
    CHECK(ledger.total(Direction::Downlink) == 6);
    CHECK(ledger.total(Direction::Uplink, MessageKind::FeatureMaps) == 24);
    CHECK(ledger.round_total(0, Direction::Uplink) == 16);
    CHECK(ledger.round_total(1, Direction::Uplink) == 8);
    CHECK(ledger.label_scalars(Direction::Uplink) == 6);
    CHECK(ledger.message_count() == 4);
}

TEST_CASE("the ledger rejects inconsistent messages") {
    CommLedger ledger;
    Message bad = Message::loss_scalar(0);
    bad.scalar_count = 2;
    CHECK_THROWS_AS(ledger.record(0, bad), ConfigError);
    Message worse = Message::full_weights(Direction::Uplink, 0, 3);
    worse.label_scalars = 4;
    CHECK_THROWS_AS(ledger.record(0, worse), ConfigError);
}

TEST_CASE("ledger exports csv rows and a json summary") {
    CommLedger ledger;
    const Tensor x({2, 3});
    ledger.record(0, Message::feature_maps(0, x, nullptr));
    ledger.record(0, Message::cut_gradients(0, x));
    const auto path = (std::filesystem::temp_directory_path() / "fedsplit_ledger_test.csv").string();
    ledger.write_csv(path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "round,direction,variant,messages,scalars,label_scalars");
    size_t rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    std::remove(path.c_str());

    const std::string j = ledger.to_json();
    CHECK(j.find("\"total_scalars\": 12") != std::string::npos);
    CHECK(j.find("uplink.feature_maps") != std::string::npos);
}

TEST_CASE("institution sampling covers full and partial participation") {
    Rng rng = Rng(5).child("sample");
    const RoundPlan all = sample_institutions(4, 4, rng, 0);
    CHECK(all.selected == std::vector<size_t>{0, 1, 2, 3});

    const RoundPlan sub = sample_institutions(10, 4, rng, 1);
    CHECK(sub.selected.size() == 4);
    CHECK(std::is_sorted(sub.selected.begin(), sub.selected.end()));
    CHECK(std::set<size_t>(sub.selected.begin(), sub.selected.end()).size() == 4);
    for (size_t id : sub.selected) CHECK(id < 10);

    Rng solo = Rng(5).child("sample");
    CHECK(sample_institutions(1, 1, solo, 0).selected == std::vector<size_t>{0});
    CHECK_THROWS_AS((void)sample_institutions(3, 4, rng, 2), ConfigError);
    CHECK_THROWS_AS((void)sample_institutions(3, 0, rng, 2), ConfigError);

    Rng a = Rng(9).child("sample"), b = Rng(9).child("sample");
    for (u64 r = 0; r < 5; ++r) {
        CHECK(sample_institutions(10, 4, a, r).selected == sample_institutions(10, 4, b, r).selected);
    }
}

TEST_CASE("batch iterator yields full batches and reshuffles at the pool edge") {
    BatchIterator it({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 3, Rng(1).child("batch", 0));
    std::vector<size_t> first_pass;
    for (int i = 0; i < 3; ++i) {
        const auto b = it.next_batch();
        CHECK(b.size() == 3);
        first_pass.insert(first_pass.end(), b.begin(), b.end());
    }
    // nine draws into a ten-element pool: all distinct
    CHECK(std::set<size_t>(first_pass.begin(), first_pass.end()).size() == 9);
    CHECK(it.steps_per_epoch_floor() == 3);
    CHECK(it.steps_per_epoch_ceil() == 4);

    // the wrapping batch completes from a fresh permutation
    const auto wrap = it.next_batch();
    CHECK(wrap.size() == 3);
}

TEST_CASE("batch iterator handles batches larger than the pool") {
    BatchIterator it({4, 2, 7}, 7, Rng(2).child("batch", 0));
    const auto b = it.next_batch();
    CHECK(b.size() == 7);
    for (size_t v : b) CHECK((v == 2 || v == 4 || v == 7));
    CHECK(it.steps_per_epoch_floor() == 0);
    CHECK(it.steps_per_epoch_ceil() == 1);
}

TEST_CASE("equal index sets produce identical batch streams regardless of input order") {
    BatchIterator a({9, 1, 5, 3, 7}, 2, Rng(3).child("batch", 1));
    BatchIterator b({1, 3, 5, 7, 9}, 2, Rng(3).child("batch", 1));
    for (int i = 0; i < 10; ++i) CHECK(a.next_batch() == b.next_batch());
    CHECK_THROWS_AS(BatchIterator({}, 2, Rng(0)), ConfigError);
    CHECK_THROWS_AS(BatchIterator({1}, 0, Rng(0)), ConfigError);
}

TEST_CASE("analytic uplink formulas match hand counts on a desk model") {
    // conv(2->4, 3x3, pad 1) on [2,6,6] keeps geometry: cut map 4*6*6 = 144
    nn::LayerStack model({nn::Layer::conv2d(2, 4, 3, 1, 1), nn::Layer::relu(), nn::Layer::flatten(),
                          nn::Layer::dense(144, 3)},
                         {2, 6, 6});
    const size_t params = 4 * 2 * 9 + 4 + 144 * 3 + 3;
    CHECK(model.parameter_count() == params);

    CHECK(analytic_uplink_floats(StrategyKind::Centralized, model, 8, 4, nn::CutSpec{1}) == 0);
    CHECK(analytic_uplink_floats(StrategyKind::FedSgd, model, 8, 4, nn::CutSpec{1}) == params);
    CHECK(analytic_uplink_floats(StrategyKind::FedAvg, model, 8, 4, nn::CutSpec{1}) == params);
    // splitavg, cut after conv: St*(B*144 + B)
    CHECK(analytic_uplink_floats(StrategyKind::SplitAvg, model, 8, 4, nn::CutSpec{1}) ==
          4 * (8 * 144 + 8));
    // v2 swaps labels for prediction chunks and a loss scalar
    CHECK(analytic_uplink_floats(StrategyKind::SplitAvgV2, model, 8, 4, nn::CutSpec{1}) ==
          4 * (8 * 144 + 8 * 3 + 1));
    CHECK(analytic_uplink_floats(StrategyKind::SplitNN, model, 8, 4, nn::CutSpec{1}) == 8 * 144 + 8);
}

TEST_CASE("final weight transfer rejoins composites and bills one message per institution") {
    nn::LayerStack full({nn::Layer::dense(3, 5), nn::Layer::relu(), nn::Layer::dense(5, 2)}, {3});
    Rng rng(8);
    full.init_weights(rng);
    const auto parts = nn::split(full, nn::CutSpec{1});

    CommLedger ledger;
    std::vector<nn::LayerStack> fis{parts.fi, parts.fi, parts.fi, parts.fi};
    const auto composites = final_weight_transfer(parts.fs, fis, ledger, 7);
    REQUIRE(composites.size() == 4);
    CHECK(ledger.message_count() == 4);
    CHECK(ledger.round_total(7, Direction::Downlink) == 4 * parts.fs.state_scalar_count());

    Tensor x({6, 3});
    Rng data(9);
    for (double& v : x.vec()) v = data.normal();
    const Tensor want = full.predict(x);
    for (const auto& c : composites) CHECK(nn::LayerStack(c).predict(x) == want);
}

TEST_CASE("strategy names round-trip") {
    for (StrategyKind k : {StrategyKind::Centralized, StrategyKind::FedAvg, StrategyKind::FedSgd,
                           StrategyKind::FedAvgM, StrategyKind::FedAvgSD, StrategyKind::FedSgdGN,
                           StrategyKind::CWT, StrategyKind::SplitNN, StrategyKind::SplitAvg,
                           StrategyKind::SplitAvgV2}) {
        CHECK(strategy_from_name(strategy_name(k)) == k);
    }
    CHECK_THROWS_AS((void)strategy_from_name("fedprox"), ConfigError);
    CHECK(is_split_strategy(StrategyKind::SplitAvg));
    CHECK_FALSE(is_split_strategy(StrategyKind::FedAvg));
}
