#include "fedsplit/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsplit/rng.hpp"
#include "json.hpp"

namespace fedsplit::data {

void Partition::validate(size_t dataset_size) const {
    if (assignments.empty()) throw ConfigError("partition has no institutions");
    std::vector<bool> seen(dataset_size, false);
    for (size_t k = 0; k < assignments.size(); ++k) {
        if (assignments[k].empty()) {
            throw ConfigError("institution " + std::to_string(k) + " has no samples");
        }
        for (size_t i : assignments[k]) {
            if (i >= dataset_size) {
                throw ConfigError("institution " + std::to_string(k) + " references sample " +
                                  std::to_string(i) + " beyond dataset size " + std::to_string(dataset_size));
            }
            if (seen[i]) {
                throw ConfigError("sample " + std::to_string(i) + " assigned to two institutions");
            }
            seen[i] = true;
        }
    }
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw ConfigError("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double mean_pairwise_ks(const Dataset& ds, const Partition& p) {
    const size_t k = p.institutions();
    if (k < 2) throw ConfigError("mean_pairwise_ks needs at least 2 institutions");
    std::vector<std::vector<double>> labels(k);
    for (size_t a = 0; a < k; ++a) {
        labels[a].reserve(p.assignments[a].size());
        for (size_t i : p.assignments[a]) labels[a].push_back(ds.labels[i]);
    }
    double sum = 0.0;
    for (size_t a = 0; a < k; ++a)
        for (size_t b = a + 1; b < k; ++b) sum += ks_two_sample(labels[a], labels[b]);
    return sum / (static_cast<double>(k) * static_cast<double>(k - 1) / 2.0);
}

size_t bin_count(const Dataset& ds) {
    return ds.task.kind == nn::TaskKind::Classification ? ds.task.classes : 4;
}

std::vector<size_t> label_bins(const Dataset& ds) {
    const size_t m = ds.size();
    std::vector<size_t> bins(m);
    if (ds.task.kind == nn::TaskKind::Classification) {
        for (size_t i = 0; i < m; ++i) bins[i] = static_cast<size_t>(ds.labels[i]);
        return bins;
    }
    // regression: quartiles by label rank
    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return ds.labels[a] < ds.labels[b]; });
    for (size_t rank = 0; rank < m; ++rank) {
        bins[order[rank]] = std::min<size_t>(3, 4 * rank / m);
    }
    return bins;
}

Partition make_label_skew_partition(const Dataset& ds, const SkewSpec& spec) {
    const size_t m = ds.size();
    const size_t k = spec.institutions;
    if (k == 0) throw ConfigError("label-skew partition needs at least one institution");
    if (spec.skew_fraction < 0.0 || spec.skew_fraction > 1.0) {
        throw ConfigError("skew_fraction must lie in [0,1], got " + std::to_string(spec.skew_fraction));
    }
    if (spec.quotas.size() != k || spec.dominant_labels.size() != k) {
        throw ConfigError("skew spec needs one quota and one dominant label per institution");
    }
    size_t total = 0;
    for (size_t q : spec.quotas) {
        if (q == 0) throw ConfigError("every institution quota must be positive");
        total += q;
    }
    if (total > m) {
        throw ConfigError("quotas sum to " + std::to_string(total) + " but the dataset has " +
                          std::to_string(m) + " samples");
    }

    const std::vector<size_t> bins = label_bins(ds);
    const size_t nbins = bin_count(ds);
    std::vector<std::vector<size_t>> pools(nbins);
    for (size_t i = 0; i < m; ++i) pools[bins[i]].push_back(i);

    Rng rng = Rng(spec.seed).child("partition");
    std::vector<bool> taken(m, false);
    Partition part;
    part.assignments.assign(k, {});

    // phase 1: dominant draws for every institution, ascending id order
    for (size_t inst = 0; inst < k; ++inst) {
        const size_t dom = spec.dominant_labels[inst];
        if (dom >= nbins) {
            throw ConfigError("dominant label " + std::to_string(dom) + " out of range for " +
                              std::to_string(nbins) + " bins");
        }
        const size_t want = std::min<size_t>(
            spec.quotas[inst], static_cast<size_t>(std::nearbyint(spec.skew_fraction *
                                                                  static_cast<double>(spec.quotas[inst]))));
        auto& pool = pools[dom];
        if (pool.size() < want) {
            throw ConfigError("label pool " + std::to_string(dom) + " exhausted: institution " +
                              std::to_string(inst) + " wants " + std::to_string(want) + ", pool has " +
                              std::to_string(pool.size()));
        }
        for (size_t n = 0; n < want; ++n) {
            const size_t pos = static_cast<size_t>(rng.uniform_below(pool.size()));
            const size_t idx = pool[pos];
            pool[pos] = pool.back();
            pool.pop_back();
            taken[idx] = true;
            part.assignments[inst].push_back(idx);
        }
    }

    // phase 2: uniform remainder from everything left, ascending id order
    std::vector<size_t> remaining;
    remaining.reserve(m);
    for (size_t i = 0; i < m; ++i)
        if (!taken[i]) remaining.push_back(i);
    for (size_t inst = 0; inst < k; ++inst) {
        const size_t want = spec.quotas[inst] - part.assignments[inst].size();
        if (remaining.size() < want) {
            throw ConfigError("dataset exhausted filling institution " + std::to_string(inst));
        }
        for (size_t n = 0; n < want; ++n) {
            const size_t pos = static_cast<size_t>(rng.uniform_below(remaining.size()));
            const size_t idx = remaining[pos];
            remaining[pos] = remaining.back();
            remaining.pop_back();
            part.assignments[inst].push_back(idx);
        }
    }

    for (auto& list : part.assignments) std::sort(list.begin(), list.end());
    part.validate(m);
    return part;
}

Partition make_quantity_skew_partition(const Dataset& ds, const std::vector<size_t>& sizes, u64 seed) {
    const size_t m = ds.size();
    if (sizes.empty()) throw ConfigError("quantity-skew partition needs at least one size");
    size_t total = 0;
    for (size_t s : sizes) {
        if (s == 0) throw ConfigError("every institution size must be positive");
        total += s;
    }
    if (total > m) {
        throw ConfigError("sizes sum to " + std::to_string(total) + " but the dataset has " +
                          std::to_string(m) + " samples");
    }
    std::vector<size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = Rng(seed).child("partition");
    rng.shuffle(perm);

    Partition part;
    size_t at = 0;
    for (size_t s : sizes) {
        part.assignments.emplace_back(perm.begin() + static_cast<long>(at),
                                      perm.begin() + static_cast<long>(at + s));
        at += s;
    }
    for (auto& list : part.assignments) std::sort(list.begin(), list.end());
    part.validate(m);
    return part;
}

SkewSpec calibrate_skew(const Dataset& ds, size_t institutions, double target_ks, u64 seed) {
    if (institutions < 2) throw ConfigError("calibrate_skew needs at least 2 institutions");
    if (target_ks < 0.0 || target_ks > 1.0) {
        throw ConfigError("target KS must lie in [0,1], got " + std::to_string(target_ks));
    }
    const size_t nbins = bin_count(ds);
    SkewSpec spec;
    spec.institutions = institutions;
    spec.seed = seed;
    spec.quotas.assign(institutions, ds.size() / institutions);
    spec.dominant_labels.resize(institutions);
    for (size_t k = 0; k < institutions; ++k) spec.dominant_labels[k] = k % nbins;

    constexpr double tol = 0.05;
    const auto measure = [&](double s) {
        SkewSpec trial = spec;
        trial.skew_fraction = s;
        return mean_pairwise_ks(ds, make_label_skew_partition(ds, trial));
    };

    double best_s = 0.0;
    double best_err = std::abs(measure(0.0) - target_ks);
    if (best_err <= tol) {
        spec.skew_fraction = 0.0;
        return spec;
    }
    const double top = measure(1.0);
    if (std::abs(top - target_ks) < best_err) {
        best_err = std::abs(top - target_ks);
        best_s = 1.0;
    }
    if (top < target_ks - tol) {
        log_info("calibrate_skew: target " + std::to_string(target_ks) + " unreachable, best " +
                 std::to_string(top) + " at skew 1");
        spec.skew_fraction = 1.0;
        return spec;
    }
    double lo = 0.0, hi = 1.0;
    for (int iter = 0; iter < 30 && best_err > tol; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double got = measure(mid);
        const double err = std::abs(got - target_ks);
        if (err < best_err) {
            best_err = err;
            best_s = mid;
        }
        (got < target_ks ? lo : hi) = mid;
    }
    spec.skew_fraction = best_s;
    return spec;
}

std::string partition_to_json(const Partition& p) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& list : p.assignments) j.push_back(list);
    return j.dump();
}

Partition partition_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("partition JSON parse failure: ") + e.what());
    }
    if (!j.is_array()) throw ConfigError("partition JSON must be an array of index arrays");
    Partition p;
    for (const auto& list : j) {
        if (!list.is_array()) throw ConfigError("partition JSON must be an array of index arrays");
        p.assignments.emplace_back();
        for (const auto& v : list) p.assignments.back().push_back(v.get<size_t>());
    }
    return p;
}

} // namespace fedsplit::data
