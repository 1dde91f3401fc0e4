#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace aspvm {

// Deterministic RNG wrapper. Distributions are implemented on top of raw
// engine draws so a stream is fully described by the mt19937_64 state
// (std::normal_distribution caches a spare value, which would break
// save/restore of mid-run state).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t raw() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(engine_() % span);
    }

    // Box-Muller, one value per call (no caching).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

// Independent stream keyed by (seed, epoch, index); used so per-sample
// augmentation draws do not depend on iteration order.
inline Rng derive_rng(uint64_t seed, uint64_t epoch, uint64_t index) {
    uint64_t h = seed;
    for (uint64_t v : {epoch + 1, index + 1}) {
        v += 0x9e3779b97f4a7c15ULL;
        v ^= v >> 33;
        v *= 0xff51afd7ed558ccdULL;
        v ^= v >> 29;
        h = (h ^ v) * 0xc4ceb9fe1a85ec53ULL;
        h ^= h >> 32;
    }
    return Rng(h);
}

}  // namespace aspvm
