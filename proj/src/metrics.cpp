#include "msgnn/metrics.hpp"

#include <limits>
#include <vector>

#include "msgnn/errors.hpp"

namespace msgnn {

namespace {

void require_same_size(const Image& a, const Image& b, const char* op) {
    if (a.height != b.height || a.width != b.width)
        throw DimensionError(std::string(op) + ": size mismatch " + std::to_string(a.height) + "x" +
                             std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                             std::to_string(b.width));
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same_size(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.pixels.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    require_same_size(a, b, "ssim");
    if (a.height < 11 || a.width < 11)
        throw DimensionError("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                             " smaller than the 11x11 window");

    const auto g = detail::ssim_window_1d();
    const int h = a.height, w = a.width;
    const int oh = h - 10, ow = w - 10;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    // Separable valid-window filter: horizontal pass then vertical pass.
    auto filt = [&](const std::vector<double>& plane) {
        std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int j = 0; j < 11; ++j) acc += g[static_cast<std::size_t>(j)] * plane[static_cast<std::size_t>(y) * w + x + j];
                tmp[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        std::vector<double> out(static_cast<std::size_t>(oh) * ow);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int i = 0; i < 11; ++i) acc += g[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
                out[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        return out;
    };

    double total = 0.0;
    std::vector<double> x(static_cast<std::size_t>(h) * w), y(x.size()), xx(x.size()), yy(x.size()), xy(x.size());
    for (int ch = 0; ch < 3; ++ch) {
        for (int p = 0; p < h * w; ++p) {
            const double va = a.pixels[static_cast<std::size_t>(p) * 3 + ch];
            const double vb = b.pixels[static_cast<std::size_t>(p) * 3 + ch];
            x[static_cast<std::size_t>(p)] = va;
            y[static_cast<std::size_t>(p)] = vb;
            xx[static_cast<std::size_t>(p)] = va * va;
            yy[static_cast<std::size_t>(p)] = vb * vb;
            xy[static_cast<std::size_t>(p)] = va * vb;
        }
        const auto mu1 = filt(x), mu2 = filt(y), ex2 = filt(xx), ey2 = filt(yy), exy = filt(xy);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu1.size(); ++i) {
            const double m1 = mu1[i], m2 = mu2[i];
            const double v1 = ex2[i] - m1 * m1;
            const double v2 = ey2[i] - m2 * m2;
            const double cov = exy[i] - m1 * m2;
            acc += ((2 * m1 * m2 + c1) * (2 * cov + c2)) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
        }
        total += acc / static_cast<double>(mu1.size());
    }
    return total / 3.0;
}

}  // namespace msgnn
