#pragma once

#include "fedsplit/common.hpp"

#include <random>
#include <string>
#include <vector>

namespace fedsplit {

/// Deterministic random stream. The engine is std::mt19937_64 (bit-exact by
/// the standard); the samplers are implemented here rather than with
/// std::*_distribution, whose output is implementation-defined.
///
/// All randomness in a run flows from one master seed through named child
/// streams ("partition", "init", "batch/3", ...), so every component replays
/// independently of the others.
class Rng {
public:
    explicit Rng(u64 seed) : seed_(seed), engine_(seed) {}

    /// Derive an independent child stream from this stream's seed and a name.
    Rng child(const std::string& name) const;
    Rng child(const std::string& name, u64 index) const;

    u64 seed() const { return seed_; }

    /// Raw 64 random bits.
    u64 next_u64() { return engine_(); }

    /// Unbiased uniform integer in [0, bound). bound must be > 0.
    u64 uniform_below(u64 bound);

    /// Uniform double in [0, 1).
    double uniform01();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (pairs cached in-stream).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct values from [0, n), ascending order.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k);

private:
    u64 seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace fedsplit
