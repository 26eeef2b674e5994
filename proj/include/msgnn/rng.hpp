#pragma once

#include <cmath>
#include <cstdint>

namespace msgnn {

// SplitMix64-based generator. Chosen over std::mt19937 + std distributions
// because the standard distributions are implementation-defined; this keeps
// every seeded artifact byte-identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        return next_u64() % n;
    }

    // Box-Muller; one value per call, the pair partner is discarded.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

// Stateless stream derivation: hash (seed, stream, counter) into a fresh
// generator. Training uses this so resume needs no saved RNG state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0) {
    Rng r(seed ^ (stream * 0xD1B54A32D192ED03ull) ^ (counter * 0x8CB92BA72F3D8DD7ull));
    return r.next_u64();
}

}  // namespace msgnn
