#include "fedsplit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iterator>
#include <numeric>
#include <sstream>
#include <thread>
#include <utility>

#include "CLI11.hpp"
#include "fedsplit/common.hpp"
#include "fedsplit/grad_check.hpp"
#include "fedsplit/loss.hpp"
#include "fedsplit/rng.hpp"
#include "fedsplit/strategies.hpp"

namespace fedsplit::cli {

namespace {

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

const char* metric_name(nn::TaskKind task) {
    return task == nn::TaskKind::Classification ? "accuracy" : "mae";
}

u64 pick_seed(const cfg::ExperimentConfig& c, const CliOptions& opt) {
    return opt.has_seed ? opt.seed : c.seeds.front();
}

} // namespace

// --- run ---------------------------------------------------------------

metrics::RunRecord run_single(const cfg::ExperimentConfig& c, u64 seed,
                              const std::string& out_dir, size_t seed_count) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg::Materialized m = cfg::materialize(c, seed);
    strat::FedState state = strat::make_state(c.strategy, m.architecture, m.train, m.partition, seed);
    strat::run_training(state);
    std::vector<nn::LayerStack> finals = strat::finalize(state);
    metrics::Metrics met = strat::evaluate(state, m.test);
    const auto t1 = std::chrono::steady_clock::now();

    const std::string suffix = seed_count == 1 ? "" : "_seed" + std::to_string(seed);
    state.ledger.write_csv(out_dir + "/ledger" + suffix + ".csv");
    if (!c.export_layer.empty())
        metrics::export_embeddings(finals.at(0), m.test, c.export_layer,
                                   out_dir + "/embeddings" + suffix + ".csv");

    metrics::RunRecord rec;
    rec.config_hash = cfg::config_hash(c);
    rec.seed = seed;
    rec.strategy = fed::strategy_name(c.strategy.kind);
    rec.partition_ks = m.mean_ks;
    rec.epochs_run = state.epoch;
    rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    rec.metrics = std::move(met);
    return rec;
}

int cmd_run(const std::string& config_path, const CliOptions& opt) {
    return guarded([&] {
        cfg::ExperimentConfig c = cfg::load_experiment_config(config_path);
        if (opt.has_seed) c.seeds = {opt.seed};
        if (!opt.out.empty()) c.out_dir = opt.out;
        std::filesystem::create_directories(c.out_dir);

        const size_t n = c.seeds.size();
        std::vector<metrics::RunRecord> records(n);
        const size_t stride = std::max<size_t>(1, opt.parallel_seeds);
        for (size_t base = 0; base < n; base += stride) {
            const size_t wave = std::min(stride, n - base);
            if (wave == 1) {
                records[base] = run_single(c, c.seeds[base], c.out_dir, n);
                continue;
            }
            std::vector<std::exception_ptr> errors(wave);
            std::vector<std::thread> pool;
            pool.reserve(wave);
            for (size_t i = 0; i < wave; ++i) {
                pool.emplace_back([&, i] {
                    try {
                        records[base + i] = run_single(c, c.seeds[base + i], c.out_dir, n);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                });
            }
            for (std::thread& t : pool) t.join();
            for (const std::exception_ptr& err : errors)
                if (err) std::rethrow_exception(err);
        }

        metrics::emit_report(records, c.out_dir);

        double mean_metric = 0.0;
        for (const metrics::RunRecord& rec : records) {
            std::printf("seed %llu: %s %s = %.6f (KS %.4f, %llu epochs, up %llu / down %llu scalars, %.2fs)\n",
                        static_cast<unsigned long long>(rec.seed), rec.strategy.c_str(),
                        metric_name(rec.metrics.task), rec.metrics.value, rec.partition_ks,
                        static_cast<unsigned long long>(rec.epochs_run),
                        static_cast<unsigned long long>(rec.metrics.uplink_scalars),
                        static_cast<unsigned long long>(rec.metrics.downlink_scalars),
                        rec.wall_seconds);
            mean_metric += rec.metrics.value;
        }
        std::printf("mean %s over %zu seed(s): %.6f\n",
                    metric_name(records.front().metrics.task), n, mean_metric / double(n));
        std::printf("wrote %s/results.json and %s/results.csv\n", c.out_dir.c_str(), c.out_dir.c_str());
        return 0;
    });
}

// --- partition -----------------------------------------------------------

std::string partition_summary(const cfg::ExperimentConfig& c, u64 seed) {
    cfg::Materialized m = cfg::materialize(c, seed);
    const size_t k = m.partition.institutions();

    std::vector<std::vector<double>> label_values(k);
    const std::vector<double>& all = m.train.labels.vec();
    for (size_t i = 0; i < k; ++i)
        for (size_t row : m.partition.assignments[i]) label_values[i].push_back(all[row]);

    std::ostringstream out;
    char buf[64];
    out << "institutions: " << k << "\n";
    out << "sizes:";
    for (size_t i = 0; i < k; ++i) out << ' ' << m.partition.assignments[i].size();
    out << "\n";
    std::snprintf(buf, sizeof(buf), "%.4f", m.mean_ks);
    out << "mean KS: " << buf << "\n";
    out << "pairwise KS:\n";
    out << "      ";
    for (size_t j = 0; j < k; ++j) {
        std::snprintf(buf, sizeof(buf), "%8zu", j);
        out << buf;
    }
    out << "\n";
    for (size_t i = 0; i < k; ++i) {
        std::snprintf(buf, sizeof(buf), "%-6zu", i);
        out << buf;
        for (size_t j = 0; j < k; ++j) {
            double v = i == j ? 0.0 : data::ks_two_sample(label_values[i], label_values[j]);
            std::snprintf(buf, sizeof(buf), "%8.4f", v);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

int cmd_partition(const std::string& config_path, const CliOptions& opt) {
    return guarded([&] {
        cfg::ExperimentConfig c = cfg::load_experiment_config(config_path);
        std::printf("%s", partition_summary(c, pick_seed(c, opt)).c_str());
        return 0;
    });
}

// --- sweep-cut -------------------------------------------------------------

std::vector<SweepRow> sweep_cut(const cfg::ExperimentConfig& c, u64 seed) {
    if (!fed::is_split_strategy(c.strategy.kind))
        throw ConfigError(std::string("sweep-cut requires a split strategy, got '") +
                          fed::strategy_name(c.strategy.kind) + "'");
    cfg::Materialized m = cfg::materialize(c, seed);
    std::vector<SweepRow> rows;
    for (size_t cut = 0; cut <= m.architecture.depth(); ++cut) {
        strat::StrategyConfig sc = c.strategy;
        sc.cut.c = cut;
        strat::FedState state = strat::make_state(sc, m.architecture, m.train, m.partition, seed);
        strat::run_training(state);
        metrics::Metrics met = strat::evaluate(state, m.test);
        rows.push_back(SweepRow{cut, met.value, state.last_layer_cut});
    }
    return rows;
}

int cmd_sweep_cut(const std::string& config_path, const CliOptions& opt) {
    return guarded([&] {
        cfg::ExperimentConfig c = cfg::load_experiment_config(config_path);
        if (!opt.out.empty()) c.out_dir = opt.out;
        const u64 seed = pick_seed(c, opt);
        const std::vector<SweepRow> rows = sweep_cut(c, seed);

        std::filesystem::create_directories(c.out_dir);
        const std::string csv_path = c.out_dir + "/sweep_cut.csv";
        std::FILE* f = std::fopen(csv_path.c_str(), "w");
        if (!f) throw ConfigError("cannot write " + csv_path);
        std::fprintf(f, "cut,metric,status\n");
        for (const SweepRow& r : rows)
            std::fprintf(f, "%zu,%.17g,%s\n", r.cut, r.metric, r.failed ? "FAILED" : "ok");
        std::fclose(f);

        std::printf("cut sweep (seed %llu):\n", static_cast<unsigned long long>(seed));
        for (const SweepRow& r : rows)
            std::printf("  cut %2zu: metric %.6f%s\n", r.cut, r.metric, r.failed ? "  [FAILED]" : "");
        std::printf("wrote %s\n", csv_path.c_str());
        return 0;
    });
}

// --- verify ------------------------------------------------------------

namespace {

std::string fmt_sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

Tensor random_features(Rng& rng, std::vector<size_t> shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<double> data(n);
    for (double& v : data) v = rng.normal();
    return Tensor::from(std::move(shape), std::move(data));
}

Tensor random_labels(Rng& rng, size_t n, size_t classes) {
    std::vector<double> data(n);
    for (double& v : data) v = double(rng.uniform_below(classes));
    return Tensor::from({n}, std::move(data));
}

VerifyResult check_grad_linear() {
    double worst = 0.0;
    for (u64 seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        nn::LayerStack ce({nn::Layer::dense(6, 4), nn::Layer::dense(4, 3)}, {6});
        ce.init_weights(rng);
        Tensor xb = random_features(rng, {8, 6});
        Tensor yb = random_labels(rng, 8, 3);
        worst = std::max(worst, nn::grad_check(ce, xb, yb, nn::LossKind::CrossEntropy));

        nn::LayerStack l1({nn::Layer::dense(6, 1)}, {6});
        l1.init_weights(rng);
        Tensor xr = random_features(rng, {8, 6});
        std::vector<double> targets(8);
        for (double& v : targets) v = rng.normal() - 10.0;  // keep |pred - y| off the L1 kink
        Tensor yr = Tensor::from({8}, std::move(targets));
        worst = std::max(worst, nn::grad_check(l1, xr, yr, nn::LossKind::L1));
    }
    return {"gradient check, linear stacks (20 seeds, tol 1e-6)", worst <= 1e-6,
            "max rel err " + fmt_sci(worst)};
}

VerifyResult check_grad_nonlinear() {
    double worst = 0.0;
    for (u64 seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        nn::LayerStack mlp({nn::Layer::dense(6, 8), nn::Layer::relu(), nn::Layer::dense(8, 3)}, {6});
        mlp.init_weights(rng);
        Tensor xb = random_features(rng, {8, 6});
        Tensor yb = random_labels(rng, 8, 3);
        worst = std::max(worst, nn::grad_check(mlp, xb, yb, nn::LossKind::CrossEntropy));

        // relu sits between the conv bias and the norm: a bias feeding a norm
        // directly is an exact null direction and would drown the check in
        // finite-difference roundoff
        nn::LayerStack conv({nn::Layer::conv2d(2, 4, 3, 1, 1), nn::Layer::relu(),
                             nn::Layer::batch_norm(4), nn::Layer::flatten(), nn::Layer::dense(64, 3)},
                            {2, 4, 4});
        conv.init_weights(rng);
        Tensor xi = random_features(rng, {6, 2, 4, 4});
        Tensor yi = random_labels(rng, 6, 3);
        worst = std::max(worst, nn::grad_check(conv, xi, yi, nn::LossKind::CrossEntropy));
    }
    return {"gradient check, nonlinear stacks (20 seeds, tol 1e-4)", worst <= 1e-4,
            "max rel err " + fmt_sci(worst)};
}

VerifyResult check_grad_detects_sign_flip() {
    Rng rng(99);
    nn::LayerStack model({nn::Layer::dense(4, 3)}, {4});
    model.init_weights(rng);
    Tensor xb = random_features(rng, {6, 4});
    Tensor yb = random_labels(rng, 6, 3);

    nn::Tape tape;
    Tensor out = model.forward(xb, nn::Mode::Train, tape);
    nn::LossResult lr = nn::loss(nn::LossKind::CrossEntropy, out, yb);
    std::vector<Tensor> grads;
    model.backward(tape, lr.grad, grads);

    // Probe the largest-magnitude analytic entry so the numeric slope is well
    // away from zero, then check that negating the analytic value is caught.
    size_t idx = 0;
    for (size_t i = 0; i < grads[0].vec().size(); ++i)
        if (std::fabs(grads[0].vec()[i]) > std::fabs(grads[0].vec()[idx])) idx = i;
    const double analytic = grads[0].vec()[idx];

    std::vector<Tensor*> refs = model.weight_refs();
    const double eps = 1e-5;
    const double orig = refs[0]->vec()[idx];
    nn::Tape tp, tm;
    refs[0]->vec()[idx] = orig + eps;
    const double lp = nn::loss(nn::LossKind::CrossEntropy, model.forward(xb, nn::Mode::Train, tp), yb).value;
    refs[0]->vec()[idx] = orig - eps;
    const double lm = nn::loss(nn::LossKind::CrossEntropy, model.forward(xb, nn::Mode::Train, tm), yb).value;
    refs[0]->vec()[idx] = orig;
    const double numeric = (lp - lm) / (2.0 * eps);

    auto rel = [](double a, double b) {
        return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
    };
    const double honest = rel(analytic, numeric);
    const double flipped = rel(-analytic, numeric);
    const bool pass = honest <= 1e-6 && flipped > 1e-2;
    return {"gradient check flags a sign-flipped backward", pass,
            "honest rel err " + fmt_sci(honest) + ", flipped rel err " + fmt_sci(flipped)};
}

VerifyResult check_chunked_loss_identity() {
    Rng rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const nn::LossKind kind = trial % 4 == 3 ? nn::LossKind::L1 : nn::LossKind::CrossEntropy;
        const size_t classes = kind == nn::LossKind::CrossEntropy ? 2 + rng.uniform_below(4) : 1;
        const size_t batch = 2 + rng.uniform_below(39);
        Tensor preds = random_features(rng, {batch, classes});
        Tensor labels = kind == nn::LossKind::CrossEntropy ? random_labels(rng, batch, classes)
                                                           : random_features(rng, {batch});

        nn::LossResult full = nn::loss(kind, preds, labels);

        const size_t chunk_count = 1 + rng.uniform_below(std::min<size_t>(4, batch));
        std::vector<size_t> bounds{0, batch};
        while (bounds.size() < chunk_count + 1) bounds.push_back(1 + rng.uniform_below(batch - 1));
        std::sort(bounds.begin(), bounds.end());
        std::vector<std::pair<Tensor, Tensor>> chunks;
        for (size_t i = 0; i + 1 < bounds.size(); ++i) {
            if (bounds[i] == bounds[i + 1]) continue;
            chunks.emplace_back(preds.slice_rows(bounds[i], bounds[i + 1]),
                                labels.slice_rows(bounds[i], bounds[i + 1]));
        }
        nn::ChunkedLossResult split = nn::loss_chunked(kind, chunks);

        worst = std::max(worst, std::fabs(full.value - split.value));
        double parts = std::accumulate(split.per_chunk_values.begin(), split.per_chunk_values.end(), 0.0);
        worst = std::max(worst, std::fabs(parts - split.value));
        size_t row = 0;
        for (const Tensor& g : split.chunk_grads)
            for (double v : g.vec()) {
                worst = std::max(worst, std::fabs(v - full.grad.vec()[row]));
                ++row;
            }
    }
    return {"chunked loss identity (100 trials, tol 1e-12)", worst <= 1e-12,
            "max abs diff " + fmt_sci(worst)};
}

data::Partition whole_partition(size_t n) {
    data::Partition p;
    p.assignments.emplace_back(n);
    std::iota(p.assignments[0].begin(), p.assignments[0].end(), size_t{0});
    return p;
}

nn::LayerStack verify_mlp() {
    return nn::LayerStack({nn::Layer::dense(6, 12), nn::Layer::relu(), nn::Layer::dense(12, 2)}, {6});
}

VerifyResult check_single_institution_collapse() {
    const data::Dataset train = data::synth_classification(160, 2, 6, 2.0, 11);
    const data::Partition part = whole_partition(train.size());
    const u64 seed = 21;

    strat::StrategyConfig base;
    base.batch = 32;
    base.lr = 0.05;
    base.momentum = 0.9;
    base.epochs = 4;
    base.cut.c = 1;

    strat::StrategyConfig central = base;
    central.kind = fed::StrategyKind::Centralized;
    strat::FedState ref = strat::make_state(central, verify_mlp(), train, part, seed);
    strat::run_training(ref);
    const std::vector<Tensor> want = strat::composite_models(ref).at(0).state_copy();

    const fed::StrategyKind kinds[] = {fed::StrategyKind::FedAvg,  fed::StrategyKind::FedSgd,
                                       fed::StrategyKind::CWT,     fed::StrategyKind::SplitNN,
                                       fed::StrategyKind::SplitAvg, fed::StrategyKind::SplitAvgV2};
    double worst = 0.0;
    for (fed::StrategyKind kind : kinds) {
        strat::StrategyConfig sc = base;
        sc.kind = kind;
        strat::FedState state = strat::make_state(sc, verify_mlp(), train, part, seed);
        strat::run_training(state);
        std::vector<nn::LayerStack> comps = strat::composite_models(state);
        const std::vector<Tensor> got = comps.at(0).state_copy();
        for (size_t i = 0; i < want.size(); ++i)
            worst = std::max(worst, max_rel_diff(want[i], got[i]));
    }
    return {"single-institution collapse, six strategies (tol 1e-10)", worst <= 1e-10,
            "max rel gap " + fmt_sci(worst)};
}

VerifyResult check_v1_v2_equivalence() {
    const data::Dataset train = data::synth_classification(240, 3, 4, 2.0, 5);
    data::SkewSpec spec;
    spec.institutions = 3;
    spec.skew_fraction = 0.5;
    spec.dominant_labels = {0, 1, 2};
    spec.quotas = {80, 80, 80};
    spec.seed = 5;
    const data::Partition part = data::make_label_skew_partition(train, spec);

    strat::StrategyConfig sc;
    sc.batch = 16;
    sc.lr = 0.05;
    sc.momentum = 0.9;
    sc.epochs = 2;
    sc.cut.c = 1;
    sc.participating = 2;

    auto run = [&](fed::StrategyKind kind) {
        strat::StrategyConfig k = sc;
        k.kind = kind;
        nn::LayerStack arch({nn::Layer::dense(4, 10), nn::Layer::relu(), nn::Layer::dense(10, 3)}, {4});
        strat::FedState state = strat::make_state(k, arch, train, part, 31);
        strat::run_training(state);
        return state;
    };
    strat::FedState v1 = run(fed::StrategyKind::SplitAvg);
    strat::FedState v2 = run(fed::StrategyKind::SplitAvgV2);

    bool equal = v1.server.model.state_copy() == v2.server.model.state_copy();
    for (size_t k = 0; k < v1.institutions.size(); ++k)
        equal = equal && v1.institutions[k].model.state_copy() == v2.institutions[k].model.state_copy();
    const u64 v2_labels = v2.ledger.label_scalars(fed::Direction::Uplink);
    const bool pass = equal && v2_labels == 0 && v1.ledger.label_scalars(fed::Direction::Uplink) > 0;
    return {"label-private variant matches baseline bitwise", pass,
            equal ? "weights bitwise equal; v2 uplinked label scalars = 0"
                  : "weight mismatch"};
}

VerifyResult check_ledger_analytic() {
    data::Dataset train = data::synth_classification(128, 2, 32, 2.0, 3);
    train.features = train.features.reshaped({128, 2, 4, 4});
    const data::Partition part =
        data::make_quantity_skew_partition(train, {40, 32, 32, 24}, 3);
    auto conv_net = [] {
        return nn::LayerStack({nn::Layer::conv2d(2, 4, 3, 1, 1), nn::Layer::batch_norm(4),
                               nn::Layer::relu(), nn::Layer::flatten(), nn::Layer::dense(64, 2)},
                              {2, 4, 4});
    };

    const std::pair<fed::StrategyKind, size_t> plans[] = {
        {fed::StrategyKind::Centralized, 0}, {fed::StrategyKind::FedAvg, 3},
        {fed::StrategyKind::FedAvgM, 3},     {fed::StrategyKind::FedAvgSD, 3},
        {fed::StrategyKind::FedSgd, 2},      {fed::StrategyKind::FedSgdGN, 2},
        {fed::StrategyKind::CWT, 0},         {fed::StrategyKind::SplitNN, 0},
        {fed::StrategyKind::SplitAvg, 2},    {fed::StrategyKind::SplitAvgV2, 3},
    };
    size_t matched = 0;
    std::string failures;
    for (const auto& [kind, st] : plans) {
        strat::StrategyConfig sc;
        sc.kind = kind;
        sc.batch = 16;
        sc.lr = 0.01;
        sc.momentum = 0.0;
        sc.epochs = 2;
        sc.cut.c = 1;
        sc.participating = st;
        strat::FedState state = strat::make_state(sc, conv_net(), train, part, 17);
        strat::run_training(state);
        const u64 recorded = state.ledger.total(fed::Direction::Uplink);
        const u64 analytic = strat::expected_uplink_scalars(state);
        if (recorded == analytic) {
            ++matched;
        } else {
            failures += std::string(" ") + fed::strategy_name(kind);
        }
    }
    const bool pass = matched == std::size(plans);
    return {"ledger totals equal analytic counts, all ten strategies", pass,
            pass ? "10/10 exact" : ("mismatch:" + failures)};
}

} // namespace

std::vector<VerifyResult> verify_suite() {
    std::vector<VerifyResult> results;
    results.push_back(check_grad_linear());
    results.push_back(check_grad_nonlinear());
    results.push_back(check_grad_detects_sign_flip());
    results.push_back(check_chunked_loss_identity());
    results.push_back(check_single_institution_collapse());
    results.push_back(check_v1_v2_equivalence());
    results.push_back(check_ledger_analytic());
    return results;
}

int cmd_verify() {
    return guarded([] {
        const std::vector<VerifyResult> results = verify_suite();
        size_t passed = 0;
        for (const VerifyResult& r : results) {
            std::printf("%s  %-55s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
            if (r.pass) ++passed;
        }
        std::printf("%zu/%zu checks passed\n", passed, results.size());
        return passed == results.size() ? 0 : 1;
    });
}

// --- report ------------------------------------------------------------

int cmd_report(const std::string& results_path) {
    return guarded([&] {
        std::string path = results_path;
        if (std::filesystem::is_directory(path)) path += "/results.json";
        const std::vector<metrics::RunRecord> records = metrics::read_report_json(path);
        std::printf("%-18s %6s %-12s %8s %10s %7s %14s %14s %9s\n", "config", "seed", "strategy",
                    "KS", "metric", "epochs", "uplink", "downlink", "wall_s");
        for (const metrics::RunRecord& r : records) {
            char hash[32];
            std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(r.config_hash));
            std::printf("%-18s %6llu %-12s %8.4f %10.6f %7llu %14llu %14llu %9.2f\n", hash,
                        static_cast<unsigned long long>(r.seed), r.strategy.c_str(), r.partition_ks,
                        r.metrics.value, static_cast<unsigned long long>(r.epochs_run),
                        static_cast<unsigned long long>(r.metrics.uplink_scalars),
                        static_cast<unsigned long long>(r.metrics.downlink_scalars), r.wall_seconds);
        }
        std::printf("%zu record(s)\n", records.size());
        return 0;
    });
}

// --- dispatch ----------------------------------------------------------

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"fedsplit: deterministic federated and split-learning simulator"};
    app.require_subcommand(1);

    CliOptions opt;
    std::string config_path;
    std::string results_path;
    u64 seed_flag = 0;

    auto add_common = [&](CLI::App* cmd, bool with_config = true) {
        if (with_config)
            cmd->add_option("config", config_path, "experiment config file")->required();
        cmd->add_option("--seed", seed_flag, "override the config's seed list with one seed")
            ->each([&](const std::string&) { opt.has_seed = true; });
        cmd->add_option("--out", opt.out, "override the output directory");
    };

    CLI::App* run = app.add_subcommand("run", "train per config; write results and ledgers");
    add_common(run);
    run->add_option("--parallel-seeds", opt.parallel_seeds, "seeds trained concurrently")
        ->check(CLI::PositiveNumber);

    CLI::App* partition = app.add_subcommand("partition", "print institution sizes and KS statistics");
    add_common(partition);

    CLI::App* sweep = app.add_subcommand("sweep-cut", "train at every cut index; write sweep_cut.csv");
    add_common(sweep);

    CLI::App* verify = app.add_subcommand("verify", "run the built-in correctness suite");

    CLI::App* report = app.add_subcommand("report", "print a results.json as a table");
    report->add_option("results", results_path, "results.json (or its directory)")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    opt.seed = seed_flag;
    if (run->parsed()) return cmd_run(config_path, opt);
    if (partition->parsed()) return cmd_partition(config_path, opt);
    if (sweep->parsed()) return cmd_sweep_cut(config_path, opt);
    if (verify->parsed()) return cmd_verify();
    if (report->parsed()) return cmd_report(results_path);
    return 2;
}

} // namespace fedsplit::cli
