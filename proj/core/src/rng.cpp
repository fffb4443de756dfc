#include "factlab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace factlab {

uint64_t Rng::next_below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::next_gauss() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * next_double() - 1.0;
        v = 2.0 * next_double() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
}

size_t Rng::next_weighted(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw std::invalid_argument("next_weighted: weights must sum to > 0");
    const double r = next_double() * total;
    double c = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        c += weights[i];
        if (r < c) return i;
    }
    return weights.size() - 1;
}

static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, uint64_t stage_tag, uint64_t index) {
    uint64_t h = splitmix64(master);
    h = splitmix64(h ^ stage_tag);
    h = splitmix64(h ^ index);
    return h;
}

} // namespace factlab
