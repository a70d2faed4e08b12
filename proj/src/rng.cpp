#include "fedsplit/rng.hpp"

#include <algorithm>
#include <cmath>

namespace fedsplit {

Rng Rng::child(const std::string& name) const {
    return Rng(fnv1a(std::to_string(seed_) + "/" + name));
}

Rng Rng::child(const std::string& name, u64 index) const {
    return Rng(fnv1a(std::to_string(seed_) + "/" + name + "/" + std::to_string(index)));
}

u64 Rng::uniform_below(u64 bound) {
    if (bound == 0) throw ConfigError("uniform_below: bound must be positive");
    // rejection sampling to stay unbiased
    const u64 limit = std::numeric_limits<u64>::max() - std::numeric_limits<u64>::max() % bound;
    u64 v;
    do {
        v = engine_();
    } while (v >= limit);
    return v % bound;
}

double Rng::uniform01() {
    // 53 random bits -> [0,1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
    if (k > n) {
        throw ConfigError("sample_without_replacement: asked for " + std::to_string(k) + " of " +
                          std::to_string(n));
    }
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(uniform_below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

} // namespace fedsplit
