#include "msgnn/rain.hpp"

#include <cmath>
#include <vector>

#include "msgnn/errors.hpp"
#include "msgnn/rng.hpp"

namespace msgnn {

void validate_rain_params(const RainParams& p) {
    if (!(p.density > 0.0 && p.density <= 0.2))
        throw ContractError("rain: density must be in (0, 0.2], got " + std::to_string(p.density));
    if (!(p.angle_deg >= -45.0 && p.angle_deg <= 45.0))
        throw ContractError("rain: angle must be in [-45, 45] degrees, got " + std::to_string(p.angle_deg));
    if (p.length_px < 3 || p.length_px > 31)
        throw ContractError("rain: streak length must be in [3, 31] px, got " + std::to_string(p.length_px));
    if (!(p.intensity > 0.0 && p.intensity <= 1.0))
        throw ContractError("rain: intensity must be in (0, 1], got " + std::to_string(p.intensity));
}

RainPair synth_rain(const Image& clean, const RainParams& params) {
    validate_image(clean, "synth_rain");
    validate_rain_params(params);
    const int h = clean.height, w = clean.width;

    Rng rng(params.seed);
    std::vector<double> seeds(static_cast<std::size_t>(h) * w, 0.0);
    for (auto& s : seeds)
        if (rng.uniform() < params.density) s = 1.0;

    // Oriented line kernel: L unit splats along the streak direction,
    // bilinearly distributed on an LxL grid.
    const int L = params.length_px;
    std::vector<double> kernel(static_cast<std::size_t>(L) * L, 0.0);
    const double theta = params.angle_deg * 3.14159265358979323846 / 180.0;
    const double dx = std::sin(theta), dy = std::cos(theta);
    const double center = (L - 1) / 2.0;
    for (int i = 0; i < L; ++i) {
        const double t = i - center;
        const double px = center + t * dx;
        const double py = center + t * dy;
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        auto splat = [&](int yy, int xx, double wgt) {
            if (yy >= 0 && yy < L && xx >= 0 && xx < L) kernel[static_cast<std::size_t>(yy) * L + xx] += wgt;
        };
        splat(y0, x0, (1 - fy) * (1 - fx));
        splat(y0, x0 + 1, (1 - fy) * fx);
        splat(y0 + 1, x0, fy * (1 - fx));
        splat(y0 + 1, x0 + 1, fy * fx);
    }

    // Same-size zero-padded convolution.
    std::vector<double> streak(static_cast<std::size_t>(h) * w, 0.0);
    const int off = L / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (seeds[static_cast<std::size_t>(y) * w + x] == 0.0) continue;
            for (int ky = 0; ky < L; ++ky) {
                const int oy = y + ky - off;
                if (oy < 0 || oy >= h) continue;
                for (int kx = 0; kx < L; ++kx) {
                    const int ox = x + kx - off;
                    if (ox < 0 || ox >= w) continue;
                    streak[static_cast<std::size_t>(oy) * w + ox] += kernel[static_cast<std::size_t>(ky) * L + kx];
                }
            }
        }

    double peak = 0.0;
    for (double v : streak) peak = std::max(peak, v);
    const double scale = peak > 0.0 ? params.intensity / peak : 0.0;

    RainPair out{Image(h, w), Image(h, w)};
    for (std::size_t p = 0; p < out.streaks.pixel_count(); ++p) {
        const float s = static_cast<float>(streak[p] * scale);
        for (int c = 0; c < 3; ++c) {
            out.streaks.pixels[p * 3 + c] = s;
            const float v = clean.pixels[p * 3 + c] + s;
            out.rainy.pixels[p * 3 + c] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }
    }
    return out;
}

}  // namespace msgnn
