#include "fedsplit/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedsplit/common.hpp"
#include "fedsplit/rng.hpp"

namespace fedsplit::cfg {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

u64 parse_u64_value(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    u64 out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
        throw ConfigError("invalid integer for " + key + ": '" + raw + "'");
    return out;
}

double parse_double_value(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("invalid number for " + key + ": ''");
    char* end = nullptr;
    double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        throw ConfigError("invalid number for " + key + ": '" + raw + "'");
    if (!std::isfinite(out))
        throw ConfigError("non-finite value for " + key + ": '" + raw + "'");
    return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    parts.push_back(cur);
    return parts;
}

std::vector<size_t> parse_size_list(const std::string& key, const std::string& raw) {
    std::vector<size_t> out;
    for (const std::string& part : split_on(raw, ','))
        out.push_back(static_cast<size_t>(parse_u64_value(key, part)));
    return out;
}

std::vector<u64> parse_u64_list(const std::string& key, const std::string& raw) {
    std::vector<u64> out;
    for (const std::string& part : split_on(raw, ','))
        out.push_back(parse_u64_value(key, part));
    return out;
}

void apply_dataset_key(DatasetSpec& d, const std::string& key, const std::string& value) {
    const std::string full = "dataset." + key;
    if (key == "source") {
        if (value == "synthetic-classification") d.source = DatasetSpec::Source::SynthClassification;
        else if (value == "synthetic-regression") d.source = DatasetSpec::Source::SynthRegression;
        else if (value == "csv") d.source = DatasetSpec::Source::Csv;
        else throw ConfigError("invalid value for dataset.source: '" + value + "' (expected synthetic-classification, synthetic-regression, or csv)");
    } else if (key == "samples") {
        d.samples = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "classes") {
        d.classes = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "dims") {
        d.dims = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "separation") {
        d.separation = parse_double_value(full, value);
    } else if (key == "noise") {
        d.noise = parse_double_value(full, value);
    } else if (key == "test_samples") {
        d.test_samples = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "shape") {
        d.shape = parse_size_list(full, value);
    } else if (key == "path") {
        d.path = value;
    } else if (key == "test_path") {
        d.test_path = value;
    } else if (key == "label_column") {
        d.label_column = value;
    } else if (key == "task") {
        if (value == "classification") d.csv_task = nn::TaskKind::Classification;
        else if (value == "regression") d.csv_task = nn::TaskKind::Regression;
        else throw ConfigError("invalid value for dataset.task: '" + value + "' (expected classification or regression)");
    } else {
        throw ConfigError("unknown key 'dataset." + key + "'");
    }
}

void apply_strategy_key(strat::StrategyConfig& s, const std::string& key, const std::string& value) {
    const std::string full = "strategy." + key;
    if (key == "name") {
        s.kind = fed::strategy_from_name(value);
    } else if (key == "cut") {
        s.cut.c = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "batch") {
        s.batch = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "lr") {
        s.lr = parse_double_value(full, value);
    } else if (key == "momentum") {
        s.momentum = parse_double_value(full, value);
    } else if (key == "server_momentum") {
        s.server_momentum = parse_double_value(full, value);
    } else if (key == "shared_fraction") {
        s.shared_fraction = parse_double_value(full, value);
    } else if (key == "gn_groups") {
        s.gn_groups = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "epochs") {
        s.epochs = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "participating") {
        s.participating = static_cast<size_t>(parse_u64_value(full, value));
    } else {
        throw ConfigError("unknown key 'strategy." + key + "'");
    }
}

void apply_partition_key(PartitionSpec& p, const std::string& key, const std::string& value) {
    const std::string full = "partition." + key;
    if (key == "kind") {
        if (value == "label") p.kind = PartitionSpec::Kind::Label;
        else if (value == "quantity") p.kind = PartitionSpec::Kind::Quantity;
        else throw ConfigError("invalid value for partition.kind: '" + value + "' (expected label or quantity)");
    } else if (key == "institutions") {
        p.institutions = static_cast<size_t>(parse_u64_value(full, value));
    } else if (key == "skew") {
        p.skew = parse_double_value(full, value);
    } else if (key == "target_ks") {
        p.target_ks = parse_double_value(full, value);
    } else if (key == "dominant_labels") {
        p.dominant_labels = parse_size_list(full, value);
    } else if (key == "quotas") {
        p.quotas = parse_size_list(full, value);
    } else if (key == "sizes") {
        p.sizes = parse_size_list(full, value);
    } else {
        throw ConfigError("unknown key 'partition." + key + "'");
    }
}

void apply_run_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
    if (key == "seeds") {
        c.seeds = parse_u64_list("run.seeds", value);
    } else if (key == "out_dir") {
        c.out_dir = value;
    } else if (key == "export_layer") {
        c.export_layer = value;
    } else {
        throw ConfigError("unknown key 'run." + key + "'");
    }
}

// --- layer DSL -------------------------------------------------------------

struct DslToken {
    std::string name;
    std::vector<size_t> args;
    std::string text;  // original spelling, for error messages
};

std::vector<DslToken> tokenize_dsl(const std::string& dsl) {
    std::vector<DslToken> tokens;
    std::istringstream in(dsl);
    std::string word;
    while (in >> word) {
        DslToken tok;
        tok.text = word;
        size_t open = word.find('(');
        if (open == std::string::npos) {
            tok.name = word;
        } else {
            if (word.back() != ')')
                throw ConfigError("malformed layer token '" + word + "' (missing ')')");
            tok.name = word.substr(0, open);
            std::string inner = word.substr(open + 1, word.size() - open - 2);
            if (trim(inner).empty())
                throw ConfigError("malformed layer token '" + word + "' (empty argument list)");
            for (const std::string& part : split_on(inner, ','))
                tok.args.push_back(static_cast<size_t>(parse_u64_value("layer '" + word + "'", part)));
        }
        if (tok.name.empty())
            throw ConfigError("malformed layer token '" + word + "'");
        tokens.push_back(std::move(tok));
    }
    return tokens;
}

std::string shape_str(const std::vector<size_t>& shape) {
    std::string s;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s.empty() ? "scalar" : s;
}

void require_args(const DslToken& tok, size_t lo, size_t hi) {
    if (tok.args.size() < lo || tok.args.size() > hi) {
        std::string range = (lo == hi) ? std::to_string(lo)
                                       : std::to_string(lo) + "-" + std::to_string(hi);
        throw ConfigError("takes " + range + " argument(s), got " + std::to_string(tok.args.size()));
    }
}

} // namespace

nn::LayerStack build_architecture(const std::string& dsl, const std::vector<size_t>& input_shape) {
    const std::vector<DslToken> tokens = tokenize_dsl(dsl);
    if (tokens.empty()) throw ConfigError("model.layers is empty");

    std::vector<nn::Layer> layers;
    std::vector<size_t> cur = input_shape;
    for (const DslToken& tok : tokens) {
        try {
            if (tok.name == "dense") {
                require_args(tok, 1, 1);
                if (cur.size() != 1)
                    throw ConfigError("dense needs a flat input, got shape " + shape_str(cur) +
                                      "; insert flatten before it");
                layers.push_back(nn::Layer::dense(cur[0], tok.args[0]));
            } else if (tok.name == "conv") {
                require_args(tok, 1, 4);
                if (cur.size() != 3)
                    throw ConfigError("conv needs a CxHxW input, got shape " + shape_str(cur));
                size_t k = tok.args.size() > 1 ? tok.args[1] : 3;
                size_t s = tok.args.size() > 2 ? tok.args[2] : 1;
                size_t p = tok.args.size() > 3 ? tok.args[3] : 1;
                layers.push_back(nn::Layer::conv2d(cur[0], tok.args[0], k, s, p));
            } else if (tok.name == "relu") {
                require_args(tok, 0, 0);
                layers.push_back(nn::Layer::relu());
            } else if (tok.name == "flatten") {
                require_args(tok, 0, 0);
                layers.push_back(nn::Layer::flatten());
            } else if (tok.name == "gap") {
                require_args(tok, 0, 0);
                layers.push_back(nn::Layer::global_avg_pool());
            } else if (tok.name == "identity") {
                require_args(tok, 0, 0);
                layers.push_back(nn::Layer::identity());
            } else if (tok.name == "batchnorm") {
                require_args(tok, 0, 0);
                if (cur.empty()) throw ConfigError("batchnorm needs a shaped input");
                layers.push_back(nn::Layer::batch_norm(cur[0]));
            } else if (tok.name == "groupnorm") {
                require_args(tok, 1, 1);
                if (cur.empty()) throw ConfigError("groupnorm needs a shaped input");
                layers.push_back(nn::Layer::group_norm(tok.args[0], cur[0]));
            } else {
                throw ConfigError("unknown layer kind '" + tok.name + "'");
            }
            nn::LayerStack probe(layers, input_shape);
            cur = probe.output_shape();
        } catch (const std::exception& e) {
            throw ConfigError("layer '" + tok.text + "': " + e.what());
        }
    }
    return nn::LayerStack(std::move(layers), input_shape);
}

// --- parsing ---------------------------------------------------------------

ExperimentConfig parse_experiment_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    std::string section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("malformed section header on line " + std::to_string(lineno) + ": '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "dataset" && section != "model" && section != "strategy" &&
                section != "partition" && section != "run")
                throw ConfigError("unknown section '[" + section + "]'");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("malformed line " + std::to_string(lineno) + " (expected key = value): '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("empty key on line " + std::to_string(lineno));
        if (section.empty())
            throw ConfigError("key '" + key + "' appears before any [section]");

        if (section == "dataset") apply_dataset_key(c.dataset, key, value);
        else if (section == "model") {
            if (key == "layers") c.layers = value;
            else throw ConfigError("unknown key 'model." + key + "'");
        } else if (section == "strategy") apply_strategy_key(c.strategy, key, value);
        else if (section == "partition") apply_partition_key(c.partition, key, value);
        else apply_run_key(c, key, value);
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config(buf.str());
}

void ExperimentConfig::validate() const {
    if (dataset.source == DatasetSpec::Source::Csv) {
        if (dataset.path.empty()) throw ConfigError("dataset.path is required when dataset.source = csv");
        if (dataset.test_path.empty()) throw ConfigError("dataset.test_path is required when dataset.source = csv");
    } else {
        if (dataset.samples == 0) throw ConfigError("dataset.samples must be positive");
        if (dataset.dims == 0) throw ConfigError("dataset.dims must be positive");
        if (dataset.source == DatasetSpec::Source::SynthClassification && dataset.classes < 2)
            throw ConfigError("dataset.classes must be at least 2");
    }
    for (size_t d : dataset.shape)
        if (d == 0) throw ConfigError("dataset.shape entries must be positive");

    strategy.validate();

    const PartitionSpec& p = partition;
    if (p.institutions == 0) throw ConfigError("partition.institutions must be positive");
    if (p.skew < 0.0 || p.skew > 1.0) throw ConfigError("partition.skew must lie in [0, 1]");
    if (p.target_ks > 1.0) throw ConfigError("partition.target_ks must not exceed 1");
    if (!p.dominant_labels.empty() && p.dominant_labels.size() != p.institutions)
        throw ConfigError("partition.dominant_labels needs one entry per institution");
    if (!p.quotas.empty() && p.quotas.size() != p.institutions)
        throw ConfigError("partition.quotas needs one entry per institution");
    if (!p.sizes.empty() && p.sizes.size() != p.institutions)
        throw ConfigError("partition.sizes needs one entry per institution");

    if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
    if (out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
    if (layers.empty()) throw ConfigError("model.layers must not be empty");
}

// --- hashing ---------------------------------------------------------------

u64 config_hash(const ExperimentConfig& c) {
    std::ostringstream s;
    const DatasetSpec& d = c.dataset;
    s << "dataset.source=" << static_cast<int>(d.source) << '\n'
      << "dataset.samples=" << d.samples << '\n'
      << "dataset.classes=" << d.classes << '\n'
      << "dataset.dims=" << d.dims << '\n'
      << "dataset.separation=" << fmt_real(d.separation) << '\n'
      << "dataset.noise=" << fmt_real(d.noise) << '\n'
      << "dataset.test_samples=" << d.test_samples << '\n'
      << "dataset.path=" << d.path << '\n'
      << "dataset.test_path=" << d.test_path << '\n'
      << "dataset.label_column=" << d.label_column << '\n'
      << "dataset.task=" << static_cast<int>(d.csv_task) << '\n';
    s << "dataset.shape=";
    for (size_t v : d.shape) s << v << ',';
    s << '\n';

    s << "model.layers=" << c.layers << '\n';

    const strat::StrategyConfig& st = c.strategy;
    s << "strategy.name=" << fed::strategy_name(st.kind) << '\n'
      << "strategy.cut=" << st.cut.c << '\n'
      << "strategy.batch=" << st.batch << '\n'
      << "strategy.lr=" << fmt_real(st.lr) << '\n'
      << "strategy.momentum=" << fmt_real(st.momentum) << '\n'
      << "strategy.server_momentum=" << fmt_real(st.server_momentum) << '\n'
      << "strategy.shared_fraction=" << fmt_real(st.shared_fraction) << '\n'
      << "strategy.gn_groups=" << st.gn_groups << '\n'
      << "strategy.epochs=" << st.epochs << '\n'
      << "strategy.participating=" << st.participating << '\n';

    const PartitionSpec& p = c.partition;
    s << "partition.kind=" << static_cast<int>(p.kind) << '\n'
      << "partition.institutions=" << p.institutions << '\n'
      << "partition.skew=" << fmt_real(p.skew) << '\n'
      << "partition.target_ks=" << fmt_real(p.target_ks) << '\n';
    s << "partition.dominant_labels=";
    for (size_t v : p.dominant_labels) s << v << ',';
    s << '\n' << "partition.quotas=";
    for (size_t v : p.quotas) s << v << ',';
    s << '\n' << "partition.sizes=";
    for (size_t v : p.sizes) s << v << ',';
    s << '\n';

    s << "run.export_layer=" << c.export_layer << '\n';
    return fnv1a(s.str());
}

// --- materialization -------------------------------------------------------

namespace {

data::Dataset build_dataset(const DatasetSpec& d, u64 seed, bool test_split) {
    switch (d.source) {
        case DatasetSpec::Source::SynthClassification: {
            size_t n = test_split
                           ? (d.test_samples ? d.test_samples
                                             : std::max(d.samples / 4, 10 * d.classes))
                           : d.samples;
            return data::synth_classification(n, d.classes, d.dims, d.separation, seed);
        }
        case DatasetSpec::Source::SynthRegression: {
            size_t n = test_split
                           ? (d.test_samples ? d.test_samples : std::max<size_t>(d.samples / 4, 10))
                           : d.samples;
            return data::synth_regression(n, d.dims, d.noise, seed);
        }
        case DatasetSpec::Source::Csv: {
            data::CsvSchema schema;
            schema.label_column = d.label_column;
            schema.task = d.csv_task;
            return data::load_csv(test_split ? d.test_path : d.path, schema);
        }
    }
    throw ConfigError("unhandled dataset source");
}

void reshape_samples(data::Dataset& ds, const std::vector<size_t>& shape) {
    if (shape.empty()) return;
    size_t want = 1;
    for (size_t v : shape) want *= v;
    if (ds.features.row_size() != want)
        throw ConfigError("dataset.shape " + shape_str(shape) + " has " + std::to_string(want) +
                          " scalars per sample but the data has " + std::to_string(ds.features.row_size()));
    std::vector<size_t> full{ds.size()};
    full.insert(full.end(), shape.begin(), shape.end());
    ds.features = ds.features.reshaped(full);
}

std::vector<size_t> default_quotas(size_t total, size_t institutions) {
    std::vector<size_t> quotas(institutions, total / institutions);
    for (size_t k = 0; k < total % institutions; ++k) ++quotas[k];
    return quotas;
}

} // namespace

Materialized materialize(const ExperimentConfig& c, u64 seed) {
    Rng master(seed);
    Materialized m;
    m.train = build_dataset(c.dataset, master.child("data").seed(), false);
    m.test = build_dataset(c.dataset, master.child("test").seed(), true);
    reshape_samples(m.train, c.dataset.shape);
    reshape_samples(m.test, c.dataset.shape);
    m.train.validate();
    m.test.validate();
    if (m.train.task.kind != m.test.task.kind)
        throw ConfigError("train and test datasets disagree on the task");

    const PartitionSpec& p = c.partition;
    if (p.kind == PartitionSpec::Kind::Quantity) {
        std::vector<size_t> sizes =
            p.sizes.empty() ? default_quotas(m.train.size(), p.institutions) : p.sizes;
        m.partition = data::make_quantity_skew_partition(m.train, sizes, seed);
    } else if (p.target_ks >= 0.0) {
        data::SkewSpec spec = data::calibrate_skew(m.train, p.institutions, p.target_ks, seed);
        m.partition = data::make_label_skew_partition(m.train, spec);
    } else {
        data::SkewSpec spec;
        spec.institutions = p.institutions;
        spec.skew_fraction = p.skew;
        spec.seed = seed;
        spec.quotas = p.quotas.empty() ? default_quotas(m.train.size(), p.institutions) : p.quotas;
        if (p.dominant_labels.empty()) {
            size_t bins = data::bin_count(m.train);
            for (size_t k = 0; k < p.institutions; ++k) spec.dominant_labels.push_back(k % bins);
        } else {
            spec.dominant_labels = p.dominant_labels;
        }
        m.partition = data::make_label_skew_partition(m.train, spec);
    }
    m.mean_ks = m.partition.institutions() > 1 ? data::mean_pairwise_ks(m.train, m.partition) : 0.0;

    m.architecture = build_architecture(c.layers, m.train.sample_shape());
    return m;
}

} // namespace fedsplit::cfg
