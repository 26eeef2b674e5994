#pragma once

#include <cstdint>

#include "msgnn/image.hpp"

namespace msgnn {

struct RainParams {
    double density = 0.03;   // fraction of seed pixels, (0, 0.2]
    double angle_deg = 15.0; // streak tilt from vertical, [-45, 45]
    int length_px = 9;       // [3, 31]
    double intensity = 0.7;  // peak streak value, (0, 1]
    std::uint64_t seed = 0;
};

void validate_rain_params(const RainParams& p);

struct RainPair {
    Image rainy;
    Image streaks;
};

// Additive degradation: rainy = clamp(clean + streaks). Streaks are
// Bernoulli(density) seeds convolved with an oriented line kernel and scaled
// so the brightest point equals `intensity`. Deterministic in the seed.
RainPair synth_rain(const Image& clean, const RainParams& params);

}  // namespace msgnn
