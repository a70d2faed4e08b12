#include "fedsplit/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fedsplit::metrics {

namespace {

double real_label(const Tensor& labels, size_t i) { return labels[i]; }

void check_label_shape(const Tensor& predictions, const Tensor& labels) {
    if (predictions.empty() || labels.empty()) {
        throw ConfigError("metric inputs must be non-empty");
    }
    if (labels.dim(0) != predictions.dim(0)) {
        throw ConfigError("metric row mismatch: " + std::to_string(predictions.dim(0)) +
                          " predictions vs " + std::to_string(labels.dim(0)) + " labels");
    }
}

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

double accuracy(const Tensor& predictions, const Tensor& labels) {
    check_label_shape(predictions, labels);
    if (predictions.rank() != 2) {
        throw ConfigError("accuracy expects [B,C] logits, got " + predictions.shape_str());
    }
    const size_t rows = predictions.dim(0), classes = predictions.dim(1);
    size_t hits = 0;
    for (size_t r = 0; r < rows; ++r) {
        size_t best = 0;
        for (size_t c = 1; c < classes; ++c) {
            if (predictions.at2(r, c) > predictions.at2(r, best)) best = c;
        }
        const double want = real_label(labels, r);
        if (want < 0 || want >= static_cast<double>(classes) || want != std::floor(want)) {
            throw ConfigError("label " + fmt_real(want) + " is not a class index below " +
                              std::to_string(classes));
        }
        if (best == static_cast<size_t>(want)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rows);
}

double mean_absolute_error(const Tensor& predictions, const Tensor& labels) {
    check_label_shape(predictions, labels);
    if (predictions.row_size() != 1) {
        throw ConfigError("mean absolute error expects one prediction per row, got " +
                          predictions.shape_str());
    }
    double sum = 0.0;
    const size_t rows = predictions.dim(0);
    for (size_t r = 0; r < rows; ++r) sum += std::fabs(predictions[r] - real_label(labels, r));
    return sum / static_cast<double>(rows);
}

std::vector<double> feature_divergence(const std::vector<Tensor>& per_institution_features) {
    if (per_institution_features.size() < 2) {
        throw ConfigError("feature divergence needs at least two institutions");
    }
    const size_t width = per_institution_features.front().row_size();
    size_t total_rows = 0;
    for (const Tensor& f : per_institution_features) {
        if (f.empty()) throw ConfigError("feature divergence: empty feature set");
        if (f.row_size() != width) {
            throw ConfigError("feature divergence: feature width mismatch (" +
                              std::to_string(f.row_size()) + " vs " + std::to_string(width) + ")");
        }
        total_rows += f.dim(0);
    }

    // per-institution and pooled means, coordinate-wise
    std::vector<std::vector<double>> means;
    std::vector<double> pooled(width, 0.0);
    for (const Tensor& f : per_institution_features) {
        std::vector<double> mu(width, 0.0);
        const size_t rows = f.dim(0);
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < width; ++c) mu[c] += f[r * width + c];
        for (size_t c = 0; c < width; ++c) {
            pooled[c] += mu[c];
            mu[c] /= static_cast<double>(rows);
        }
        means.push_back(std::move(mu));
    }
    for (double& v : pooled) v /= static_cast<double>(total_rows);

    // pooled scalar spread: rms deviation of every scalar from its coordinate mean
    double ss = 0.0;
    for (const Tensor& f : per_institution_features) {
        const size_t rows = f.dim(0);
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < width; ++c) {
                const double d = f[r * width + c] - pooled[c];
                ss += d * d;
            }
    }
    const double sigma = std::sqrt(ss / (static_cast<double>(total_rows) * static_cast<double>(width)));

    std::vector<double> out;
    out.reserve(means.size());
    for (const auto& mu : means) {
        double d2 = 0.0;
        for (size_t c = 0; c < width; ++c) {
            const double d = mu[c] - pooled[c];
            d2 += d * d;
        }
        out.push_back(sigma == 0.0 ? 0.0 : std::sqrt(d2) / sigma);
    }
    return out;
}

void export_embeddings(const nn::LayerStack& model, const data::Dataset& ds,
                       const std::string& layer_tag, const std::string& path) {
    ds.validate();
    size_t boundary = 0;
    bool found = false;
    std::string known;
    for (size_t i = 0; i < model.depth(); ++i) {
        if (!known.empty()) known += ", ";
        known += model.layer(i).name;
        if (model.layer(i).name == layer_tag) {
            boundary = i + 1;
            found = true;
        }
    }
    if (!found) {
        throw ConfigError("unknown layer tag '" + layer_tag + "'; known layers: " + known);
    }

    nn::LayerStack head = nn::split(model, nn::CutSpec{boundary}).fi;
    const Tensor feats = head.predict(ds.features);
    const size_t width = feats.row_size();

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write embeddings file: " + path);
    out << "sample,label";
    for (size_t c = 0; c < width; ++c) out << ",f" << c;
    out << "\n";
    for (size_t r = 0; r < ds.size(); ++r) {
        out << r << "," << fmt_real(ds.labels[r]);
        for (size_t c = 0; c < width; ++c) out << "," << fmt_real(feats[r * width + c]);
        out << "\n";
    }
    if (!out) throw ConfigError("failed while writing embeddings file: " + path);
}

namespace {

nlohmann::json metrics_to_json(const Metrics& m) {
    return nlohmann::json{{"task", m.task == nn::TaskKind::Classification ? "classification" : "regression"},
                          {"value", m.value},
                          {"per_institution", m.per_institution},
                          {"loss_curve", m.loss_curve},
                          {"uplink_scalars", m.uplink_scalars},
                          {"downlink_scalars", m.downlink_scalars},
                          {"uplink_label_scalars", m.uplink_label_scalars}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
    Metrics m;
    m.task = j.at("task").get<std::string>() == "regression" ? nn::TaskKind::Regression
                                                             : nn::TaskKind::Classification;
    m.value = j.at("value").get<double>();
    m.per_institution = j.at("per_institution").get<std::vector<double>>();
    m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    m.uplink_scalars = j.at("uplink_scalars").get<u64>();
    m.downlink_scalars = j.at("downlink_scalars").get<u64>();
    m.uplink_label_scalars = j.at("uplink_label_scalars").get<u64>();
    return m;
}

} // namespace

void emit_report(const std::vector<RunRecord>& records, const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    const std::string json_path = out_dir + "/results.json";
    const std::string csv_path = out_dir + "/results.csv";

    nlohmann::json doc;
    doc["schema_version"] = 1;
    doc["records"] = nlohmann::json::array();
    for (const RunRecord& r : records) {
        doc["records"].push_back(nlohmann::json{{"config_hash", r.config_hash},
                                                {"seed", r.seed},
                                                {"strategy", r.strategy},
                                                {"partition_ks", r.partition_ks},
                                                {"epochs_run", r.epochs_run},
                                                {"wall_seconds", r.wall_seconds},
                                                {"metrics", metrics_to_json(r.metrics)}});
    }
    {
        std::ofstream out(json_path, std::ios::trunc);
        if (!out) throw ConfigError("cannot write report: " + json_path);
        out << doc.dump(2) << "\n";
        if (!out) throw ConfigError("failed while writing report: " + json_path);
    }

    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw ConfigError("cannot write report: " + csv_path);
    csv << "config_hash,seed,strategy,partition_ks,task,metric,epochs_run,"
           "uplink_scalars,downlink_scalars,uplink_label_scalars,wall_seconds\n";
    for (const RunRecord& r : records) {
        csv << r.config_hash << "," << r.seed << "," << r.strategy << ","
            << fmt_real(r.partition_ks) << ","
            << (r.metrics.task == nn::TaskKind::Classification ? "classification" : "regression")
            << "," << fmt_real(r.metrics.value) << "," << r.epochs_run << ","
            << r.metrics.uplink_scalars << "," << r.metrics.downlink_scalars << ","
            << r.metrics.uplink_label_scalars << "," << fmt_real(r.wall_seconds) << "\n";
    }
    if (!csv) throw ConfigError("failed while writing report: " + csv_path);
}

std::vector<RunRecord> read_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read report: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed report " + path + ": " + e.what());
    }
    if (doc.value("schema_version", 0) != 1) {
        throw ConfigError("unsupported report schema in " + path);
    }
    std::vector<RunRecord> out;
    for (const auto& j : doc.at("records")) {
        RunRecord r;
        r.config_hash = j.at("config_hash").get<u64>();
        r.seed = j.at("seed").get<u64>();
        r.strategy = j.at("strategy").get<std::string>();
        r.partition_ks = j.at("partition_ks").get<double>();
        r.epochs_run = j.at("epochs_run").get<u64>();
        r.wall_seconds = j.at("wall_seconds").get<double>();
        r.metrics = metrics_from_json(j.at("metrics"));
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace fedsplit::metrics
