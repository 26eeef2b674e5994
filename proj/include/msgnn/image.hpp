#pragma once

#include <string>
#include <vector>

#include "msgnn/tensor.hpp"

namespace msgnn {

// H x W x 3 interleaved RGB, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
};

void validate_image(const Image& img, const char* context);

// Interleaved HxWx3 -> planar [3,H,W] tensor and back.
template <typename T>
TensorT<T> image_to_tensor(const Image& img) {
    std::vector<T> planar(static_cast<std::size_t>(3) * img.height * img.width);
    const std::size_t plane = img.pixel_count();
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            planar[static_cast<std::size_t>(c) * plane + p] = static_cast<T>(img.pixels[p * 3 + c]);
    return TensorT<T>::from_vector({3, img.height, img.width}, std::move(planar));
}

template <typename T>
Image tensor_to_image(const TensorT<T>& t) {
    if (t.rank() != 3 || t.dim(0) != 3)
        throw DimensionError("tensor_to_image: expected [3,H,W], got " + shape_str(t.shape()));
    Image img(t.dim(1), t.dim(2));
    const std::size_t plane = img.pixel_count();
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) {
            float v = static_cast<float>(t.data()[static_cast<std::size_t>(c) * plane + p]);
            img.pixels[p * 3 + c] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }
    return img;
}

// Bilinear downscale by 2 or 4; dimensions must divide.
Image downsample(const Image& img, int factor);

// Reflection-pad to (ceil(H/m)*m, ceil(W/m)*m).
Image pad_to_multiple(const Image& img, int multiple);
Image crop_image(const Image& img, int top, int left, int h, int w);

}  // namespace msgnn
