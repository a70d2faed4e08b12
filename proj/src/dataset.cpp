#include "fedsplit/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedsplit/rng.hpp"

namespace fedsplit::data {

std::vector<size_t> Dataset::sample_shape() const {
    if (features.empty()) throw ConfigError("dataset has no features");
    return {features.shape().begin() + 1, features.shape().end()};
}

Dataset Dataset::subset(const std::vector<size_t>& indices) const {
    if (indices.empty()) throw ConfigError("dataset subset with no indices");
    std::vector<size_t> shape = features.shape();
    shape[0] = indices.size();
    Tensor f(shape);
    Tensor l({indices.size()});
    const size_t row = features.row_size();
    for (size_t r = 0; r < indices.size(); ++r) {
        const size_t i = indices[r];
        if (i >= size()) throw ConfigError("subset index " + std::to_string(i) + " out of range");
        std::copy(features.data() + i * row, features.data() + (i + 1) * row, f.data() + r * row);
        l[r] = labels[i];
    }
    return Dataset{std::move(f), std::move(l), task};
}

void Dataset::validate() const {
    if (size() == 0) throw ConfigError("dataset is empty");
    if (labels.size() != size()) {
        throw ConfigError("dataset has " + std::to_string(size()) + " feature rows but " +
                          std::to_string(labels.size()) + " labels");
    }
    ensure_finite(features, "dataset features");
    ensure_finite(labels, "dataset labels");
    if (task.kind == nn::TaskKind::Classification) {
        for (size_t i = 0; i < labels.size(); ++i) {
            const double v = labels[i];
            if (v != std::nearbyint(v) || v < 0.0 || v >= static_cast<double>(task.classes)) {
                throw ConfigError("label " + std::to_string(v) + " at row " + std::to_string(i) +
                                  " invalid for " + std::to_string(task.classes) + " classes");
            }
        }
    }
}

Dataset synth_classification(size_t n, size_t classes, size_t dims, double separation, u64 seed) {
    if (classes < 2) throw ConfigError("synth_classification needs at least 2 classes");
    if (n < classes * 10) {
        throw ConfigError("synth_classification needs n >= 10 per class (asked n=" + std::to_string(n) +
                          ", classes=" + std::to_string(classes) + ")");
    }
    if (dims == 0) throw ConfigError("synth_classification needs at least one feature dimension");
    if (separation < 0.0) throw ConfigError("separation must be nonnegative");

    Rng rng = Rng(seed).child("data");
    Dataset ds;
    ds.task = nn::Task::classification(classes);
    ds.features = Tensor({n, dims});
    ds.labels = Tensor({n});
    for (size_t i = 0; i < n; ++i) {
        const size_t c = i % classes;
        ds.labels[i] = static_cast<double>(c);
        for (size_t d = 0; d < dims; ++d) {
            const double mean = (d == c % dims) ? separation : 0.0;
            ds.features.at2(i, d) = mean + rng.normal();
        }
    }
    return ds;
}

Dataset synth_regression(size_t n, size_t dims, double noise, u64 seed) {
    if (n < 10) throw ConfigError("synth_regression needs n >= 10");
    if (dims == 0) throw ConfigError("synth_regression needs at least one feature dimension");
    if (noise < 0.0) throw ConfigError("noise must be nonnegative");

    Rng master(seed);
    Rng target = master.child("target");
    std::vector<double> w(dims);
    for (double& v : w) v = target.normal();

    Rng rng = master.child("data");
    Dataset ds;
    ds.task = nn::Task::regression();
    ds.features = Tensor({n, dims});
    ds.labels = Tensor({n});
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims));
    for (size_t i = 0; i < n; ++i) {
        double y = 0.0;
        for (size_t d = 0; d < dims; ++d) {
            const double x = rng.normal();
            ds.features.at2(i, d) = x;
            y += w[d] * x * scale;
        }
        y += 0.5 * std::sin(2.0 * ds.features.at2(i, 0));
        ds.labels[i] = y + noise * rng.normal();
    }
    return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_cell(const std::string& cell, size_t line_no) {
    size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw ConfigError("non-numeric cell '" + cell + "' on line " + std::to_string(line_no));
    }
    while (used < cell.size() && (cell[used] == ' ' || cell[used] == '\r')) ++used;
    if (used != cell.size()) {
        throw ConfigError("non-numeric cell '" + cell + "' on line " + std::to_string(line_no));
    }
    return v;
}

} // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError(path + " is empty (no header row)");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_csv_line(line);
    size_t label_col = header.size();
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == schema.label_column) label_col = i;
    if (label_col == header.size()) {
        throw ConfigError(path + ": no column named '" + schema.label_column + "' in header");
    }
    if (header.size() < 2) throw ConfigError(path + ": need at least one feature column besides the label");

    std::vector<double> feats, labs;
    size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ConfigError(path + ": line " + std::to_string(line_no) + " has " +
                              std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(header.size()));
        }
        for (size_t i = 0; i < cells.size(); ++i) {
            const double v = parse_cell(cells[i], line_no);
            (i == label_col ? labs : feats).push_back(v);
        }
    }
    if (labs.empty()) throw ConfigError(path + " has no data rows");

    const size_t rows = labs.size();
    Dataset ds;
    ds.features = Tensor::from({rows, header.size() - 1}, std::move(feats));
    ds.labels = Tensor::from({rows}, std::move(labs));
    if (schema.task == nn::TaskKind::Classification) {
        size_t classes = schema.classes;
        if (classes == 0) {
            double mx = 0.0;
            for (size_t i = 0; i < ds.labels.size(); ++i) mx = std::max(mx, ds.labels[i]);
            classes = static_cast<size_t>(mx) + 1;
        }
        ds.task = nn::Task::classification(std::max<size_t>(classes, 2));
    } else {
        ds.task = nn::Task::regression();
    }
    ds.validate();
    return ds;
}

void write_csv(const std::string& path, const Dataset& ds) {
    if (ds.features.rank() != 2) {
        throw ConfigError("write_csv needs flat [rows, features] data, got " + ds.features.shape_str());
    }
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    const size_t dims = ds.features.dim(1);
    for (size_t d = 0; d < dims; ++d) f << "f" << d << ",";
    f << "label\n";
    char buf[40];
    for (size_t i = 0; i < ds.size(); ++i) {
        for (size_t d = 0; d < dims; ++d) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features.at2(i, d));
            f << buf << ",";
        }
        std::snprintf(buf, sizeof buf, "%.17g", ds.labels[i]);
        f << buf << "\n";
    }
    if (!f) throw ConfigError("failed writing " + path);
}

} // namespace fedsplit::data
