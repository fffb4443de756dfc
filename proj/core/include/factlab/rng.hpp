#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace factlab {

// Deterministic RNG used everywhere. Wraps std::mt19937_64 (a standardized
// engine) and hand-rolls the distributions, since the std:: distribution
// objects are allowed to differ between library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    // Uniform integer in [0, n), unbiased via rejection.
    uint64_t next_below(uint64_t n);

    int next_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Standard normal via Box-Muller (cached spare).
    double next_gauss();

    // Index sample from unnormalized weights.
    size_t next_weighted(const std::vector<double>& weights);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stable per-stage seed derivation: one master seed drives the pipeline,
// stages and repetitions get decorrelated streams.
uint64_t derive_seed(uint64_t master, uint64_t stage_tag, uint64_t index = 0);

} // namespace factlab
