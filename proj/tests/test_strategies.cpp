#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "fedsplit/strategies.hpp"

using namespace fedsplit;
using fed::StrategyKind;

namespace {

nn::LayerStack mlp(size_t in, size_t hidden, size_t out) {
    return nn::LayerStack({nn::Layer::dense(in, hidden), nn::Layer::relu(), nn::Layer::dense(hidden, out)},
                          {in});
}

/// conv -> batchnorm -> relu -> flatten -> dense head on [2,4,4] inputs.
nn::LayerStack conv_bn_net(size_t classes) {
    return nn::LayerStack({nn::Layer::conv2d(2, 4, 3, 1, 1), nn::Layer::batch_norm(4), nn::Layer::relu(),
                           nn::Layer::flatten(), nn::Layer::dense(64, classes)},
                          {2, 4, 4});
}

/// Classification blobs reshaped into [n,2,4,4] images for the conv net.
data::Dataset image_blobs(size_t n, size_t classes, u64 seed) {
    data::Dataset ds = data::synth_classification(n, classes, 32, 2.0, seed);
    ds.features = ds.features.reshaped({n, 2, 4, 4});
    return ds;
}

data::Partition whole_partition(size_t n) {
    std::vector<size_t> all(n);
    std::iota(all.begin(), all.end(), size_t{0});
    return data::Partition{{all}};
}

data::Partition halves_partition(size_t n) {
    std::vector<size_t> a(n / 2), b(n - n / 2);
    std::iota(a.begin(), a.end(), size_t{0});
    std::iota(b.begin(), b.end(), n / 2);
    return data::Partition{{a, b}};
}

/// The same rows twice: institutions over the two halves hold identical data.
data::Dataset doubled(const data::Dataset& half) {
    data::Dataset d;
    d.features = concat_batch({half.features, half.features});
    d.labels = concat_batch({half.labels, half.labels});
    d.task = half.task;
    return d;
}

bool states_bitwise(const nn::LayerStack& a, const nn::LayerStack& b) {
    const auto sa = a.state_copy(), sb = b.state_copy();
    if (sa.size() != sb.size()) return false;
    for (size_t i = 0; i < sa.size(); ++i) {
        if (!(sa[i] == sb[i])) return false;
    }
    return true;
}

double state_gap(const nn::LayerStack& a, const nn::LayerStack& b) {
    const auto sa = a.state_copy(), sb = b.state_copy();
    REQUIRE(sa.size() == sb.size());
    double m = 0.0;
    for (size_t i = 0; i < sa.size(); ++i) m = std::max(m, max_rel_diff(sa[i], sb[i]));
    return m;
}

/// One minibatch SGD step written out long-hand, mirroring the trainer's
/// arithmetic (multiply by the reciprocal) so oracles can be bitwise.
double manual_step(nn::LayerStack& model, nn::OptimState& opt, const data::Dataset& mb,
                   nn::LossKind lk, double normalizer) {
    nn::Tape tape;
    const Tensor out = model.forward(mb.features, nn::Mode::Train, tape);
    nn::LossResult res = nn::loss(lk, out, mb.labels);
    const double inv = 1.0 / normalizer;
    for (double& v : res.grad.vec()) v *= inv;
    std::vector<Tensor> grads;
    model.backward(tape, res.grad, grads);
    nn::sgd_step(model.weight_refs(), grads, opt);
    return res.value * inv;
}

strat::StrategyConfig base_cfg(StrategyKind kind) {
    strat::StrategyConfig cfg;
    cfg.kind = kind;
    cfg.batch = 32;
    cfg.lr = 0.05;
    cfg.momentum = 0.9;
    return cfg;
}

} // namespace

TEST_CASE("strategy configs and state construction validate their inputs") {
    const data::Dataset ds = data::synth_classification(64, 2, 4, 2.0, 3);
    const nn::LayerStack net = mlp(4, 8, 2);

    strat::StrategyConfig cfg = base_cfg(StrategyKind::FedAvg);
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = base_cfg(StrategyKind::FedAvg);
    cfg.lr = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = base_cfg(StrategyKind::FedAvg);
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = base_cfg(StrategyKind::FedAvgM);
    cfg.server_momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = base_cfg(StrategyKind::FedAvgSD);
    cfg.shared_fraction = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.shared_fraction = -0.01;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.shared_fraction = 1.0;  // whole-dataset pool is legal
    CHECK_NOTHROW(cfg.validate());
    cfg = base_cfg(StrategyKind::Centralized);
    cfg.lr = 0.0;  // frozen-model diagnostic runs are legal
    CHECK_NOTHROW(cfg.validate());

    // participation checks live in make_state
    cfg = base_cfg(StrategyKind::FedAvg);
    cfg.participating = 3;
    CHECK_THROWS_WITH_AS((void)strat::make_state(cfg, net, ds, halves_partition(64), 1),
                         doctest::Contains("participating"), ConfigError);
    cfg = base_cfg(StrategyKind::CWT);
    cfg.participating = 1;
    CHECK_THROWS_AS((void)strat::make_state(cfg, net, ds, halves_partition(64), 1), ConfigError);
    cfg = base_cfg(StrategyKind::SplitNN);
    cfg.participating = 1;
    CHECK_THROWS_AS((void)strat::make_state(cfg, net, ds, halves_partition(64), 1), ConfigError);

    cfg = base_cfg(StrategyKind::FedAvg);
    CHECK_THROWS_WITH_AS((void)strat::make_state(cfg, net, ds, data::Partition{}, 1),
                         doctest::Contains("no institutions"), ConfigError);

    // model head width must match the task
    CHECK_THROWS_WITH_AS((void)strat::make_state(cfg, mlp(4, 8, 3), ds, halves_partition(64), 1),
                         doctest::Contains("output width"), ConfigError);

    // round functions reject states built for another strategy
    strat::FedState s = strat::make_state(base_cfg(StrategyKind::Centralized), net, ds, {}, 1);
    CHECK_THROWS_AS((void)strat::run_fedavg_round(s), ConfigError);
    CHECK_THROWS_AS((void)strat::run_splitnn_epoch(s), ConfigError);
}

TEST_CASE("the centralized epoch equals a hand-built SGD loop") {
    const data::Dataset ds = data::synth_classification(96, 2, 5, 2.0, 3);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::Centralized);
    strat::FedState s = strat::make_state(cfg, mlp(5, 8, 2), ds, {}, 7);
    strat::FedState clone = s;

    const double reported = strat::run_centralized_epoch(s);

    nn::LayerStack model = clone.institutions[0].model;
    fed::BatchIterator iter = clone.institutions[0].batches;
    nn::OptimState opt(cfg.lr, cfg.momentum);
    double acc = 0.0;
    const size_t steps = iter.steps_per_epoch_floor();
    CHECK(steps == 3);
    for (size_t t = 0; t < steps; ++t) {
        acc += manual_step(model, opt, ds.subset(iter.next_batch()), nn::LossKind::CrossEntropy, 32.0);
    }

    CHECK(states_bitwise(s.institutions[0].model, model));
    CHECK(reported == acc / static_cast<double>(steps));
    CHECK(s.ledger.total() == 0);  // no federation traffic for the baseline
}

TEST_CASE("a zero learning rate leaves the model untouched") {
    const data::Dataset ds = data::synth_classification(96, 2, 5, 2.0, 3);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::Centralized);
    cfg.lr = 0.0;
    cfg.momentum = 0.0;
    cfg.epochs = 2;
    strat::FedState s = strat::make_state(cfg, mlp(5, 8, 2), ds, {}, 7);
    const nn::LayerStack before = s.institutions[0].model;
    strat::run_training(s);
    CHECK(state_gap(s.institutions[0].model, before) == 0.0);
    REQUIRE(s.loss_curve.size() == 2);
    // same weights, same pool content; only the batch grouping differs
    CHECK(std::fabs(s.loss_curve[0] - s.loss_curve[1]) <= 1e-12);
}

TEST_CASE("centralized training descends on separable blobs") {
    // full-batch gradient descent: pool size == batch size, 200 steps
    const data::Dataset ds = data::synth_classification(32, 2, 2, 4.0, 13);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::Centralized);
    cfg.lr = 0.01;
    cfg.momentum = 0.0;
    cfg.epochs = 200;
    strat::FedState s = strat::make_state(cfg, mlp(2, 8, 2), ds, {}, 29);
    strat::run_training(s);
    REQUIRE(s.loss_curve.size() == 200);

    auto window = [&](size_t t) {
        double m = 0.0;
        for (size_t i = t; i < t + 5; ++i) m += s.loss_curve[i];
        return m / 5.0;
    };
    for (size_t t = 0; t + 6 <= s.loss_curve.size(); ++t) {
        CHECK(window(t + 1) <= window(t) + 1e-12);
    }
    CHECK(s.loss_curve.back() < 0.5 * s.loss_curve.front());
}

TEST_CASE("a fedavg round matches the weighted-average oracle") {
    const data::Dataset ds = data::synth_classification(240, 2, 4, 2.0, 11);
    const data::Partition part = data::make_quantity_skew_partition(ds, {96, 80, 64}, 5);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::FedAvg);
    cfg.batch = 16;
    cfg.participating = 2;
    strat::FedState s = strat::make_state(cfg, mlp(4, 8, 2), ds, part, 19);
    strat::FedState clone = s;

    Rng plan_rng = s.server.rng;  // predict the round plan
    const fed::RoundPlan plan = fed::sample_institutions(3, 2, plan_rng, 0);
    REQUIRE(plan.selected.size() == 2);

    const double reported = strat::run_fedavg_round(s);

    // replay each selected institution by hand from the broadcast weights
    const std::vector<Tensor> global = clone.server.model.state_copy();
    std::vector<std::vector<Tensor>> states;
    std::vector<double> weights;
    double loss_acc = 0.0, weight_acc = 0.0;
    for (size_t k : plan.selected) {
        fed::InstitutionState& inst = clone.institutions[k];
        inst.model.set_state(global);
        const size_t steps = inst.batches.steps_per_epoch_floor();
        double acc = 0.0;
        for (size_t t = 0; t < steps; ++t) {
            acc += manual_step(inst.model, inst.optim, ds.subset(inst.batches.next_batch()),
                               nn::LossKind::CrossEntropy, 16.0);
        }
        states.push_back(inst.model.state_copy());
        weights.push_back(static_cast<double>(inst.batches.pool_size()));
        loss_acc += weights.back() * (acc / static_cast<double>(steps));
        weight_acc += weights.back();
    }
    const double total = weights[0] + weights[1];
    std::vector<Tensor> avg;
    for (size_t i = 0; i < states[0].size(); ++i) {
        Tensor t(states[0][i].shape());
        for (size_t k = 0; k < states.size(); ++k) {
            const double w = weights[k] / total;
            for (size_t j = 0; j < t.size(); ++j) t[j] += w * states[k][i][j];
        }
        avg.push_back(std::move(t));
    }
    const std::vector<Tensor> got = s.server.model.state_copy();
    REQUIRE(got.size() == avg.size());
    for (size_t i = 0; i < avg.size(); ++i) CHECK(got[i] == avg[i]);
    CHECK(reported == loss_acc / weight_acc);

    // weight sync accounting: one state down and one up per selected institution
    const u64 sync = s.server.model.state_scalar_count();
    CHECK(s.ledger.round_total(0, fed::Direction::Downlink) == 2 * sync);
    CHECK(s.ledger.round_total(0, fed::Direction::Uplink) == 2 * sync);
}

TEST_CASE("institutions holding identical data collapse to local training") {
    const u64 seed = 9;
    const data::Dataset half = data::synth_classification(128, 2, 4, 2.0, 21);
    const data::Dataset both = doubled(half);
    const nn::LayerStack net = mlp(4, 8, 2);

    auto make_pair_state = [&](StrategyKind kind) {
        strat::FedState s = strat::make_state(base_cfg(kind), net, both, halves_partition(256), seed);
        // give the twin institution the first one's batch stream so both draw
        // the same row positions (and therefore the same data) every step
        s.institutions[1].batches =
            fed::BatchIterator(s.institutions[1].indices, 32, Rng(seed).child("batch", 0));
        return s;
    };

    SUBCASE("fedavg round equals single-institution training") {
        strat::FedState pair = make_pair_state(StrategyKind::FedAvg);
        strat::FedState solo =
            strat::make_state(base_cfg(StrategyKind::FedAvg), net, half, whole_partition(128), seed);
        (void)strat::run_fedavg_round(pair);
        (void)strat::run_fedavg_round(solo);
        CHECK(states_bitwise(pair.server.model, solo.server.model));
    }

    SUBCASE("fedsgd step equals one centralized step on that batch") {
        strat::FedState pair = make_pair_state(StrategyKind::FedSgd);
        strat::FedState solo =
            strat::make_state(base_cfg(StrategyKind::FedSgd), net, half, whole_partition(128), seed);
        (void)strat::run_fedsgd_iteration(pair);
        (void)strat::run_fedsgd_iteration(solo);
        CHECK(states_bitwise(pair.server.model, solo.server.model));
    }
}

TEST_CASE("a fedsgd step applies the pooled-batch gradient") {
    const data::Dataset ds = data::synth_classification(288, 2, 4, 2.0, 33);
    const data::Partition part = data::make_quantity_skew_partition(ds, {96, 96, 96}, 3);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::FedSgd);
    cfg.batch = 16;
    cfg.lr = 0.1;
    cfg.momentum = 0.0;
    strat::FedState s = strat::make_state(cfg, mlp(4, 8, 2), ds, part, 41);
    strat::FedState clone = s;

    (void)strat::run_fedsgd_iteration(s);

    // pool the three minibatches into one 48-row batch and take one plain step
    std::vector<Tensor> feats, labels;
    for (size_t k = 0; k < 3; ++k) {
        const data::Dataset mb = ds.subset(clone.institutions[k].batches.next_batch());
        feats.push_back(mb.features);
        labels.push_back(mb.labels);
    }
    nn::LayerStack pooled = clone.server.model;
    nn::OptimState opt(cfg.lr, cfg.momentum);
    data::Dataset big{concat_batch(feats), concat_batch(labels), ds.task};
    (void)manual_step(pooled, opt, big, nn::LossKind::CrossEntropy, 48.0);

    CHECK(state_gap(s.server.model, pooled) <= 1e-12);
}

TEST_CASE("fedavgm reduces to fedavg at zero server momentum") {
    const data::Dataset ds = data::synth_classification(192, 2, 4, 2.0, 25);
    const data::Partition part = halves_partition(192);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::FedAvgM);
    cfg.server_momentum = 0.0;
    cfg.epochs = 3;
    strat::FedState m = strat::make_state(cfg, mlp(4, 8, 2), ds, part, 55);
    cfg.kind = StrategyKind::FedAvg;
    strat::FedState a = strat::make_state(cfg, mlp(4, 8, 2), ds, part, 55);
    strat::run_training(m);
    strat::run_training(a);
    CHECK(states_bitwise(m.server.model, a.server.model));
    CHECK(m.loss_curve == a.loss_curve);
}

TEST_CASE("fedavgm follows the velocity recurrence on a constant drift") {
    // dense(1,1) on constant features with a far-away constant target: the L1
    // gradient saturates, so every round moves every institution by the same
    // fixed offset and the server sees a constant weight delta.
    const size_t n = 64;
    data::Dataset ds;
    ds.features = Tensor({n, 1}, 1.0);
    ds.labels = Tensor({n}, 1000.0);
    ds.task = nn::Task::regression();

    strat::StrategyConfig cfg = base_cfg(StrategyKind::FedAvgM);
    cfg.batch = 8;
    cfg.lr = 0.01;
    cfg.momentum = 0.0;
    cfg.server_momentum = 0.9;
    nn::LayerStack net({nn::Layer::dense(1, 1)}, {1});
    strat::FedState s = strat::make_state(cfg, net, ds, halves_partition(n), 61);

    auto w_and_b = [&]() {
        const auto ws = s.server.model.weights_copy();
        return std::pair<double, double>(ws[0][0], ws[1][0]);
    };
    const auto [w0, b0] = w_and_b();
    (void)strat::run_fedavgm_round(s);
    const auto [w1, b1] = w_and_b();
    (void)strat::run_fedavgm_round(s);
    const auto [w2, b2] = w_and_b();

    // each round: 4 local steps of +lr on both parameters at every institution
    CHECK(std::fabs((w1 - w0) - 0.04) <= 1e-12);
    CHECK(std::fabs((w2 - w1) - 1.9 * (w1 - w0)) <= 1e-9);
    CHECK(std::fabs((b2 - b1) - 1.9 * (b1 - b0)) <= 1e-9);

    // first round with zero initial velocity lands on the fedavg average
    cfg.kind = StrategyKind::FedAvg;
    strat::FedState a = strat::make_state(cfg, net, ds, halves_partition(n), 61);
    (void)strat::run_fedavg_round(a);
    const double w1_avg = a.server.model.weights_copy()[0][0];
    CHECK(std::fabs(w1 - w1_avg) <= 1e-12);
}

TEST_CASE("the shared pool is stratified, deterministic, and optional") {
    const data::Dataset ds = data::synth_classification(400, 2, 4, 2.0, 71);
    const data::Partition part = data::make_quantity_skew_partition(ds, {100, 100, 100, 100}, 9);

    SUBCASE("zero fraction degenerates to plain fedavg, bitwise") {
        strat::StrategyConfig cfg = base_cfg(StrategyKind::FedAvgSD);
        cfg.shared_fraction = 0.0;
        cfg.epochs = 2;
        strat::FedState sd = strat::make_state(cfg, mlp(4, 8, 2), ds, part, 77);
        CHECK(sd.server.shared_pool.empty());
        cfg.kind = StrategyKind::FedAvg;
        strat::FedState fa = strat::make_state(cfg, mlp(4, 8, 2), ds, part, 77);
        strat::run_training(sd);
        strat::run_training(fa);
        CHECK(states_bitwise(sd.server.model, fa.server.model));
    }

    SUBCASE("default fraction draws a balanced five-percent pool") {
        strat::FedState s =
            strat::make_state(base_cfg(StrategyKind::FedAvgSD), mlp(4, 8, 2), ds, part, 77);
        const std::vector<size_t>& pool = s.server.shared_pool;
        REQUIRE(pool.size() == 20);  // round(0.05 * 400)
        CHECK(std::is_sorted(pool.begin(), pool.end()));
        CHECK(std::adjacent_find(pool.begin(), pool.end()) == pool.end());
        size_t zeros = 0;
        for (size_t i : pool) {
            REQUIRE(i < 400);
            zeros += ds.labels[i] == 0.0 ? 1 : 0;
        }
        CHECK(zeros == 10);  // balanced classes -> exact per-class quota

        // every institution trains on the union of its shard and the pool
        for (size_t k = 0; k < 4; ++k) {
            std::vector<size_t> local = part.assignments[k];
            std::sort(local.begin(), local.end());
            std::vector<size_t> want;
            std::set_union(local.begin(), local.end(), pool.begin(), pool.end(),
                           std::back_inserter(want));
            CHECK(s.institutions[k].indices == want);
            CHECK(s.institutions[k].batches.pool_size() == want.size());
        }

        // same seed, same pool
        strat::FedState again =
            strat::make_state(base_cfg(StrategyKind::FedAvgSD), mlp(4, 8, 2), ds, part, 77);
        CHECK(again.server.shared_pool == pool);
    }

    SUBCASE("a full pool gives every institution the whole dataset") {
        strat::StrategyConfig cfg = base_cfg(StrategyKind::FedAvgSD);
        cfg.shared_fraction = 1.0;
        strat::FedState s = strat::make_state(cfg, mlp(4, 8, 2), ds, part, 77);
        CHECK(s.server.shared_pool.size() == 400);
        for (const auto& inst : s.institutions) CHECK(inst.indices.size() == 400);
    }
}

TEST_CASE("group-norm substitution rewrites batch norms and validates divisibility") {
    const data::Dataset ds = image_blobs(64, 2, 83);
    const data::Partition part = halves_partition(64);
    nn::LayerStack net({nn::Layer::conv2d(2, 6, 3, 1, 1), nn::Layer::batch_norm(6), nn::Layer::relu(),
                        nn::Layer::flatten(), nn::Layer::dense(96, 2)},
                       {2, 4, 4});

    strat::StrategyConfig cfg = base_cfg(StrategyKind::FedSgdGN);
    cfg.batch = 16;
    strat::FedState s = strat::make_state(cfg, net, ds, part, 91);
    CHECK(s.server.model.layer(1).kind == nn::LayerKind::GroupNorm);
    CHECK(s.server.model.layer(1).groups == 6);  // min(32, channels)
    CHECK(s.institutions[0].model.layer(1).kind == nn::LayerKind::GroupNorm);
    CHECK(s.server.model.state_scalar_count() == s.server.model.parameter_count());

    cfg.gn_groups = 3;
    strat::FedState s3 = strat::make_state(cfg, net, ds, part, 91);
    CHECK(s3.server.model.layer(1).groups == 3);

    cfg.gn_groups = 4;  // 6 channels not divisible by 4
    CHECK_THROWS_AS((void)strat::make_state(cfg, net, ds, part, 91), ConfigError);

    // plain fedsgd keeps batch normalization
    strat::FedState plain = strat::make_state(base_cfg(StrategyKind::FedSgd), net, ds, part, 91);
    CHECK(plain.server.model.layer(1).kind == nn::LayerKind::BatchNorm);

    // on a norm-free network the two variants are the same procedure
    const data::Dataset flat = data::synth_classification(64, 2, 4, 2.0, 83);
    strat::StrategyConfig c2 = base_cfg(StrategyKind::FedSgdGN);
    c2.epochs = 2;
    strat::FedState gn = strat::make_state(c2, mlp(4, 8, 2), flat, halves_partition(64), 91);
    c2.kind = StrategyKind::FedSgd;
    strat::FedState sg = strat::make_state(c2, mlp(4, 8, 2), flat, halves_partition(64), 91);
    strat::run_training(gn);
    strat::run_training(sg);
    CHECK(states_bitwise(gn.server.model, sg.server.model));
}

TEST_CASE("cyclic weight transfer is serial SGD with traveling momentum") {
    const u64 seed = 17;
    const data::Dataset ds = data::synth_classification(192, 2, 4, 2.0, 31);
    const data::Partition part = data::make_quantity_skew_partition(ds, {96, 96}, 7);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::CWT);
    cfg.batch = 16;
    cfg.momentum = 0.5;
    strat::FedState s = strat::make_state(cfg, mlp(4, 8, 2), ds, part, seed);

    (void)strat::run_cwt_epoch(s);

    // independent serial trainer: one model, one optimizer, the institutions'
    // batch streams visited in id order for floor(Q/(B*K)) steps each
    nn::LayerStack model = mlp(4, 8, 2);
    Rng init = Rng(seed).child("init");
    model.init_weights(init);
    nn::OptimState opt(cfg.lr, cfg.momentum);
    for (size_t k = 0; k < 2; ++k) {
        fed::BatchIterator iter(part.assignments[k], 16, Rng(seed).child("batch", k));
        for (size_t t = 0; t < 192 / (16 * 2); ++t) {
            (void)manual_step(model, opt, ds.subset(iter.next_batch()), nn::LossKind::CrossEntropy, 16.0);
        }
    }
    CHECK(states_bitwise(s.server.model, model));

    // one weight hand-off in and out per institution, billed at state size
    const u64 sync = s.server.model.state_scalar_count();
    CHECK(s.ledger.total(fed::Direction::Uplink) == 2 * sync);
    CHECK(s.ledger.total(fed::Direction::Downlink) == 2 * sync);
    CHECK(s.ledger.message_count() == 4);
}

TEST_CASE("splitnn trains serially through the cut and bills the traveling weights") {
    const u64 seed = 37;
    const data::Dataset ds = data::synth_classification(192, 2, 4, 2.0, 31);
    const data::Partition part = data::make_quantity_skew_partition(ds, {96, 96}, 7);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::SplitNN);
    cfg.batch = 16;
    cfg.momentum = 0.5;
    cfg.cut = nn::CutSpec{1};
    strat::FedState s = strat::make_state(cfg, mlp(4, 10, 2), ds, part, seed);

    (void)strat::run_splitnn_epoch(s);

    // independent split trainer with separate momentum on each side
    nn::LayerStack full = mlp(4, 10, 2);
    Rng init = Rng(seed).child("init");
    full.init_weights(init);
    nn::SubNetworks parts = nn::split(full, nn::CutSpec{1});
    nn::OptimState opt_fi(cfg.lr, cfg.momentum), opt_fs(cfg.lr, cfg.momentum);
    for (size_t k = 0; k < 2; ++k) {
        fed::BatchIterator iter(part.assignments[k], 16, Rng(seed).child("batch", k));
        for (size_t t = 0; t < 6; ++t) {
            const data::Dataset mb = ds.subset(iter.next_batch());
            nn::Tape ti, ts;
            const Tensor z = parts.fi.forward(mb.features, nn::Mode::Train, ti);
            const Tensor preds = parts.fs.forward(z, nn::Mode::Train, ts);
            nn::LossResult res = nn::loss(nn::LossKind::CrossEntropy, preds, mb.labels);
            for (double& v : res.grad.vec()) v *= 1.0 / 16.0;
            std::vector<Tensor> gs;
            const Tensor gcut = parts.fs.backward(ts, res.grad, gs);
            nn::sgd_step(parts.fs.weight_refs(), gs, opt_fs);
            std::vector<Tensor> gi;
            parts.fi.backward(ti, gcut, gi);
            nn::sgd_step(parts.fi.weight_refs(), gi, opt_fi);
        }
    }
    CHECK(states_bitwise(s.traveling_fi, parts.fi));
    CHECK(states_bitwise(s.server.model, parts.fs));

    // accounting: 12 iterations of features(+labels) up and cut gradients
    // down, plus one FI hand-off each way per institution
    const u64 fi_sync = s.traveling_fi.state_scalar_count();
    CHECK(s.ledger.total(fed::Direction::Uplink, fed::MessageKind::FeatureMaps) == 12 * (16 * 10 + 16));
    CHECK(s.ledger.total(fed::Direction::Downlink, fed::MessageKind::CutGradients) == 12 * 16 * 10);
    CHECK(s.ledger.total(fed::Direction::Uplink, fed::MessageKind::FullWeights) == 2 * fi_sync);
    CHECK(s.ledger.total(fed::Direction::Downlink, fed::MessageKind::FullWeights) == 2 * fi_sync);
    CHECK(s.ledger.label_scalars(fed::Direction::Uplink) == 12 * 16);
    CHECK(s.ledger.total(fed::Direction::Uplink) == strat::expected_uplink_scalars(s));

    // finalize ships the traveled client stack and the server stack to both
    const u64 down_before = s.ledger.total(fed::Direction::Downlink);
    std::vector<nn::LayerStack> comps = strat::finalize(s);
    REQUIRE(comps.size() == 2);
    CHECK(s.ledger.total(fed::Direction::Downlink) - down_before ==
          2 * fi_sync + 2 * s.server.model.state_scalar_count());
    const nn::LayerStack joined = nn::join(nn::SubNetworks{parts.fi, parts.fs, false});
    for (const nn::LayerStack& c : comps) CHECK(states_bitwise(c, joined));
    CHECK(states_bitwise(s.institutions[0].model, parts.fi));
}

TEST_CASE("splitavg with an identity client stack is centralized training on the union batch") {
    const u64 seed = 23;
    const data::Dataset ds = data::synth_classification(256, 3, 4, 2.0, 47);
    const data::Partition part = data::make_quantity_skew_partition(ds, {64, 64, 64, 64}, 11);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::SplitAvg);
    cfg.batch = 16;
    cfg.lr = 0.1;
    cfg.cut = nn::CutSpec{0};
    strat::FedState s = strat::make_state(cfg, mlp(4, 8, 3), ds, part, seed);
    // the client stack degenerates to a passthrough: raw inputs cross the boundary
    REQUIRE(s.institutions[0].model.depth() == 1);
    CHECK(s.institutions[0].model.layer(0).kind == nn::LayerKind::Identity);
    CHECK(s.institutions[0].model.parameter_count() == 0);

    strat::run_epoch(s);  // ceil(64/16) = 4 iterations

    nn::LayerStack model = mlp(4, 8, 3);
    Rng init = Rng(seed).child("init");
    model.init_weights(init);
    nn::OptimState opt(cfg.lr, cfg.momentum);
    std::vector<fed::BatchIterator> iters;
    for (size_t k = 0; k < 4; ++k) {
        iters.emplace_back(part.assignments[k], 16, Rng(seed).child("batch", k));
    }
    double acc = 0.0;
    for (size_t t = 0; t < 4; ++t) {
        std::vector<Tensor> feats, labels;
        for (auto& iter : iters) {
            const data::Dataset mb = ds.subset(iter.next_batch());
            feats.push_back(mb.features);
            labels.push_back(mb.labels);
        }
        data::Dataset big{concat_batch(feats), concat_batch(labels), ds.task};
        acc += manual_step(model, opt, big, nn::LossKind::CrossEntropy, 64.0);
    }
    CHECK(states_bitwise(s.server.model, model));
    REQUIRE(s.loss_curve.size() == 1);
    CHECK(s.loss_curve[0] == acc / 4.0);
}

TEST_CASE("a splitavg round updates both sides and leaves bystanders alone") {
    const data::Dataset ds = data::synth_classification(240, 2, 4, 2.0, 53);
    const data::Partition part = data::make_quantity_skew_partition(ds, {80, 80, 80}, 13);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::SplitAvg);
    cfg.batch = 16;
    cfg.momentum = 0.0;
    cfg.lr = 0.1;
    cfg.participating = 2;
    strat::FedState s = strat::make_state(cfg, mlp(4, 10, 2), ds, part, 59);
    strat::FedState clone = s;

    fed::RoundPlan plan;
    plan.selected = {0, 2};
    plan.round = 0;
    (void)strat::run_splitavg_round(s, plan);

    // replay by hand: forward both clients, concatenate ascending, one server
    // step on the pooled batch, slice the cut gradient back to each owner
    const data::Dataset mb0 = ds.subset(clone.institutions[0].batches.next_batch());
    const data::Dataset mb2 = ds.subset(clone.institutions[2].batches.next_batch());
    nn::LayerStack fi0 = clone.institutions[0].model, fi2 = clone.institutions[2].model;
    nn::Tape t0, t2, ts;
    const Tensor z0 = fi0.forward(mb0.features, nn::Mode::Train, t0);
    const Tensor z2 = fi2.forward(mb2.features, nn::Mode::Train, t2);
    nn::LayerStack fs = clone.server.model;
    CHECK(fs.depth() == 2);  // relu + dense head
    const Tensor preds = fs.forward(concat_batch({z0, z2}), nn::Mode::Train, ts);
    nn::LossResult res = nn::loss(nn::LossKind::CrossEntropy, preds, concat_batch({mb0.labels, mb2.labels}));
    for (double& v : res.grad.vec()) v *= 1.0 / 32.0;  // St*B normalization
    std::vector<Tensor> gs;
    const Tensor gin = fs.backward(ts, res.grad, gs);
    nn::OptimState opt_s(cfg.lr, cfg.momentum), opt_0(cfg.lr, cfg.momentum), opt_2(cfg.lr, cfg.momentum);
    nn::sgd_step(fs.weight_refs(), gs, opt_s);
    std::vector<Tensor> g0, g2;
    fi0.backward(t0, gin.slice_rows(0, 16), g0);
    nn::sgd_step(fi0.weight_refs(), g0, opt_0);
    fi2.backward(t2, gin.slice_rows(16, 32), g2);
    nn::sgd_step(fi2.weight_refs(), g2, opt_2);

    CHECK(states_bitwise(s.server.model, fs));
    CHECK(states_bitwise(s.institutions[0].model, fi0));
    CHECK(states_bitwise(s.institutions[2].model, fi2));
    // bystander institution 1 is untouched by the round
    CHECK(states_bitwise(s.institutions[1].model, clone.institutions[1].model));

    // per-iteration accounting for St=2
    CHECK(s.ledger.total(fed::Direction::Uplink) == 2 * (16 * 10 + 16));
    CHECK(s.ledger.total(fed::Direction::Downlink) == 2 * (16 * 10));
    CHECK(s.ledger.label_scalars(fed::Direction::Uplink) == 2 * 16);

    fed::RoundPlan empty;
    CHECK_THROWS_WITH_AS((void)strat::run_splitavg_round(s, empty), doctest::Contains("empty"),
                         ConfigError);
}

TEST_CASE("the label-private variant reproduces splitavg weights bitwise") {
    const data::Dataset ds = data::synth_classification(240, 3, 4, 1.5, 41);
    data::SkewSpec spec;
    spec.institutions = 4;
    spec.skew_fraction = 0.6;
    spec.dominant_labels = {0, 1, 2, 0};
    spec.quotas = {60, 60, 60, 60};
    spec.seed = 2;
    const data::Partition part = data::make_label_skew_partition(ds, spec);

    auto run_pair = [&](size_t cut, size_t st, size_t epochs) {
        strat::StrategyConfig cfg = base_cfg(StrategyKind::SplitAvg);
        cfg.batch = 16;
        cfg.cut = nn::CutSpec{cut};
        cfg.participating = st;
        cfg.epochs = epochs;
        strat::FedState v1 = strat::make_state(cfg, mlp(4, 10, 3), ds, part, 67);
        cfg.kind = StrategyKind::SplitAvgV2;
        strat::FedState v2 = strat::make_state(cfg, mlp(4, 10, 3), ds, part, 67);
        strat::run_training(v1);
        strat::run_training(v2);

        CHECK(states_bitwise(v1.server.model, v2.server.model));
        for (size_t k = 0; k < 4; ++k) {
            CHECK(states_bitwise(v1.institutions[k].model, v2.institutions[k].model));
        }
        REQUIRE(v1.loss_curve.size() == v2.loss_curve.size());
        for (size_t e = 0; e < v1.loss_curve.size(); ++e) {
            CHECK(std::fabs(v1.loss_curve[e] - v2.loss_curve[e]) <= 1e-12);
        }
        // label privacy: v1 uplinks labels, v2 uplinks none
        CHECK(v1.ledger.label_scalars(fed::Direction::Uplink) > 0);
        CHECK(v2.ledger.label_scalars(fed::Direction::Uplink) == 0);
        // v2 pays for prediction chunks down and gradient chunks + losses up
        CHECK(v2.ledger.total(fed::Direction::Uplink, fed::MessageKind::ChunkGradients) > 0);
        CHECK(v2.ledger.total(fed::Direction::Downlink, fed::MessageKind::PredictionChunk) > 0);
    };

    run_pair(1, 0, 2);  // full participation, two epochs
    run_pair(0, 0, 1);  // identity client stack
    run_pair(2, 0, 1);  // cut after the hidden block
    run_pair(1, 2, 2);  // partial participation draws the same plans

    // running statistics drift identically too: batch-norm inside the client
    const data::Dataset imgs = image_blobs(128, 2, 101);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::SplitAvg);
    cfg.batch = 16;
    cfg.cut = nn::CutSpec{2};  // conv + batchnorm stay institution-side
    strat::FedState v1 = strat::make_state(cfg, conv_bn_net(2), imgs, halves_partition(128), 73);
    cfg.kind = StrategyKind::SplitAvgV2;
    strat::FedState v2 = strat::make_state(cfg, conv_bn_net(2), imgs, halves_partition(128), 73);
    strat::run_epoch(v1);
    strat::run_epoch(v2);
    CHECK(states_bitwise(v1.server.model, v2.server.model));
    CHECK(states_bitwise(v1.institutions[0].model, v2.institutions[0].model));
    CHECK(states_bitwise(v1.institutions[1].model, v2.institutions[1].model));
}

TEST_CASE("single-institution federations collapse to the centralized trainer") {
    const data::Dataset ds = data::synth_classification(320, 2, 6, 2.0, 51);
    const data::Partition part = whole_partition(320);
    const nn::LayerStack net = mlp(6, 12, 2);

    strat::StrategyConfig cfg = base_cfg(StrategyKind::Centralized);
    cfg.epochs = 10;  // 10 steps per epoch -> 100 SGD steps
    strat::FedState ref = strat::make_state(cfg, net, ds, part, 5);
    strat::run_training(ref);
    const nn::LayerStack want = strat::composite_models(ref)[0];

    const StrategyKind kinds[] = {StrategyKind::FedAvg,  StrategyKind::FedSgd,
                                  StrategyKind::CWT,     StrategyKind::SplitNN,
                                  StrategyKind::SplitAvg, StrategyKind::SplitAvgV2};
    for (StrategyKind kind : kinds) {
        CAPTURE(fed::strategy_name(kind));
        strat::StrategyConfig c = base_cfg(kind);
        c.epochs = 10;
        c.cut = nn::CutSpec{1};
        strat::FedState s = strat::make_state(c, net, ds, part, 5);
        strat::run_training(s);
        const nn::LayerStack got = strat::composite_models(s)[0];
        CHECK(state_gap(got, want) <= 1e-10);
    }

    // the collapse holds at the degenerate cuts too
    for (size_t cut : {size_t{0}, size_t{3}}) {
        CAPTURE(cut);
        strat::StrategyConfig c = base_cfg(StrategyKind::SplitAvg);
        c.epochs = 10;
        c.cut = nn::CutSpec{cut};
        strat::FedState s = strat::make_state(c, net, ds, part, 5);
        CHECK(s.last_layer_cut == (cut == 3));
        strat::run_training(s);
        CHECK(state_gap(strat::composite_models(s)[0], want) <= 1e-10);
    }
}

TEST_CASE("recorded uplink equals the analytic count for every strategy") {
    const data::Dataset ds = image_blobs(256, 2, 103);
    const data::Partition part = data::make_quantity_skew_partition(ds, {80, 64, 64, 48}, 17);
    const nn::LayerStack net = conv_bn_net(2);

    struct Row {
        StrategyKind kind;
        size_t st;
    };
    const Row rows[] = {
        {StrategyKind::Centralized, 0}, {StrategyKind::FedAvg, 3},   {StrategyKind::FedAvgM, 3},
        {StrategyKind::FedAvgSD, 3},    {StrategyKind::FedSgd, 2},   {StrategyKind::FedSgdGN, 2},
        {StrategyKind::CWT, 0},         {StrategyKind::SplitNN, 0},  {StrategyKind::SplitAvg, 2},
        {StrategyKind::SplitAvgV2, 3},
    };
    for (const Row& row : rows) {
        CAPTURE(fed::strategy_name(row.kind));
        strat::StrategyConfig cfg = base_cfg(row.kind);
        cfg.batch = 16;
        cfg.epochs = 2;
        cfg.momentum = 0.0;
        cfg.cut = nn::CutSpec{1};
        cfg.participating = row.st;
        strat::FedState s = strat::make_state(cfg, net, ds, part, 113);
        strat::run_training(s);
        CHECK(s.ledger.total(fed::Direction::Uplink) == strat::expected_uplink_scalars(s));
    }

    // spot-check the closed forms behind a few of those totals
    {
        strat::StrategyConfig cfg = base_cfg(StrategyKind::FedAvg);
        cfg.batch = 16;
        cfg.epochs = 2;
        cfg.participating = 3;
        strat::FedState s = strat::make_state(cfg, net, ds, part, 113);
        const u64 state = s.server.model.state_scalar_count();
        CHECK(state == s.server.model.parameter_count() + 8);  // batch-norm running stats
        CHECK(strat::expected_uplink_scalars(s) == 2 * 3 * state);
    }
    {
        strat::StrategyConfig cfg = base_cfg(StrategyKind::FedSgd);
        cfg.batch = 16;
        cfg.epochs = 2;
        cfg.participating = 2;
        strat::FedState s = strat::make_state(cfg, net, ds, part, 113);
        // ceil(80/16) = 5 iterations per epoch, gradients priced at parameters
        CHECK(strat::expected_uplink_scalars(s) == 2 * 5 * 2 * s.server.model.parameter_count());
        strat::run_training(s);
        CHECK(s.ledger.total(fed::Direction::Downlink) ==
              u64{2} * 5 * 2 * s.server.model.parameter_count());
    }
    {
        strat::StrategyConfig cfg = base_cfg(StrategyKind::SplitAvgV2);
        cfg.batch = 16;
        cfg.epochs = 2;
        cfg.cut = nn::CutSpec{1};
        strat::FedState s = strat::make_state(cfg, net, ds, part, 113);
        // cutmap 4*4*4 = 64 per sample; chunks are 16x2; one loss scalar each
        const u64 per_iter = 4 * (u64{16} * 64 + 16 * 2 + 1);
        CHECK(strat::expected_uplink_scalars(s) == 2 * 5 * per_iter);
        strat::run_training(s);
        CHECK(s.ledger.total(fed::Direction::Uplink) == 2 * 5 * per_iter);
        CHECK(s.ledger.total(fed::Direction::Downlink) ==
              u64{2} * 5 * 4 * (u64{16} * 64 + 16 * 2));
        CHECK(s.ledger.label_scalars(fed::Direction::Uplink) == 0);
    }
    {
        strat::StrategyConfig cfg = base_cfg(StrategyKind::CWT);
        cfg.batch = 16;
        cfg.epochs = 2;
        strat::FedState s = strat::make_state(cfg, net, ds, part, 113);
        CHECK(strat::expected_uplink_scalars(s) == 2 * 4 * s.server.model.state_scalar_count());
    }
}

TEST_CASE("evaluation reports per-institution metrics and communication totals") {
    const data::Dataset train = data::synth_classification(192, 2, 4, 3.0, 121);
    const data::Dataset test = data::synth_classification(60, 2, 4, 3.0, 122);
    const data::Partition part = data::make_quantity_skew_partition(train, {64, 64, 64}, 19);
    strat::StrategyConfig cfg = base_cfg(StrategyKind::SplitAvg);
    cfg.batch = 16;
    cfg.epochs = 2;
    cfg.cut = nn::CutSpec{1};
    strat::FedState s = strat::make_state(cfg, mlp(4, 8, 2), train, part, 131);
    strat::run_training(s);

    const metrics::Metrics m = strat::evaluate(s, test);
    REQUIRE(m.per_institution.size() == 3);
    double mean = 0.0;
    for (double v : m.per_institution) mean += v;
    mean /= 3.0;
    CHECK(std::fabs(m.value - mean) <= 1e-12);
    CHECK(m.loss_curve == s.loss_curve);
    CHECK(m.uplink_scalars == s.ledger.total(fed::Direction::Uplink));
    CHECK(m.downlink_scalars == s.ledger.total(fed::Direction::Downlink));
    CHECK(m.task == nn::TaskKind::Classification);

    // composites rejoin client and server stacks; finalize bills the broadcast
    std::vector<nn::LayerStack> comps = strat::composite_models(s);
    REQUIRE(comps.size() == 3);
    const Tensor probe = test.features.slice_rows(0, 8);
    const Tensor before = comps[1].predict(probe);

    const u64 down_before = s.ledger.total(fed::Direction::Downlink);
    std::vector<nn::LayerStack> finals = strat::finalize(s);
    CHECK(s.ledger.total(fed::Direction::Downlink) - down_before ==
          u64{3} * s.server.model.state_scalar_count());
    CHECK(finals[1].predict(probe) == before);

    // task mismatches are rejected
    const data::Dataset reg = data::synth_regression(40, 4, 0.1, 7);
    CHECK_THROWS_AS((void)strat::evaluate(s, reg), ConfigError);
    const data::Dataset three = data::synth_classification(60, 3, 4, 3.0, 123);
    CHECK_THROWS_AS((void)strat::evaluate(s, three), ConfigError);
}
