#pragma once

#include <array>
#include <cmath>

#include "msgnn/image.hpp"
#include "msgnn/tensor.hpp"

namespace msgnn {

// 10*log10(1/MSE) with peak 1.0; +inf for identical images.
double psnr(const Image& a, const Image& b);

// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// L=1, valid positions only, per channel then averaged.
double ssim(const Image& a, const Image& b);

namespace detail {

inline std::array<double, 11> ssim_window_1d() {
    std::array<double, 11> g{};
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    return g;
}

template <typename T>
TensorT<T> ssim_window_tensor() {
    const auto g = ssim_window_1d();
    std::vector<T> w(121);
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j)
            w[static_cast<std::size_t>(i) * 11 + j] =
                static_cast<T>(g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)]);
    return TensorT<T>::from_vector({1, 1, 11, 11}, std::move(w));
}

}  // namespace detail

// Differentiable SSIM over [C,H,W] tensors; used by the training loss.
template <typename T>
TensorT<T> ssim_tensor(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 3 || b.rank() != 3) throw DimensionError("ssim: expected rank-3 [C,H,W] tensors");
    detail::require_same_shape(a, b, "ssim");
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (h < 11 || w < 11)
        throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                             " smaller than the 11x11 window");

    const auto window = detail::ssim_window_tensor<T>();
    const auto zero_bias = TensorT<T>::zeros({1});
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    auto filt = [&](const TensorT<T>& x) { return conv2d(x, window, zero_bias, 1, 0); };

    TensorT<T> acc;
    for (int ch = 0; ch < c; ++ch) {
        auto x = slice_channels(a, ch, 1);
        auto y = slice_channels(b, ch, 1);
        auto mu1 = filt(x);
        auto mu2 = filt(y);
        auto mu1_sq = mul(mu1, mu1);
        auto mu2_sq = mul(mu2, mu2);
        auto mu12 = mul(mu1, mu2);
        auto sigma1 = sub(filt(mul(x, x)), mu1_sq);
        auto sigma2 = sub(filt(mul(y, y)), mu2_sq);
        auto sigma12 = sub(filt(mul(x, y)), mu12);
        auto num = mul(add_scalar(scalar_mul(mu12, 2.0), c1), add_scalar(scalar_mul(sigma12, 2.0), c2));
        auto den = mul(add_scalar(add(mu1_sq, mu2_sq), c1), add_scalar(add(sigma1, sigma2), c2));
        auto m = mean(div(num, den));
        acc = ch == 0 ? m : add(acc, m);
    }
    return scalar_mul(acc, 1.0 / c);
}

// Training objective: negative SSIM, range [-1, 1].
template <typename T>
TensorT<T> ssim_loss(const TensorT<T>& estimate, const TensorT<T>& truth) {
    return scalar_mul(ssim_tensor(estimate, truth), -1.0);
}

}  // namespace msgnn
