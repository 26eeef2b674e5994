#include "msgnn/image.hpp"

#include "msgnn/errors.hpp"

namespace msgnn {

void validate_image(const Image& img, const char* context) {
    if (img.height < 8 || img.width < 8)
        throw DimensionError(std::string(context) + ": image must be at least 8x8, got " +
                             std::to_string(img.height) + "x" + std::to_string(img.width));
    if (img.pixels.size() != img.pixel_count() * 3)
        throw ContractError(std::string(context) + ": pixel buffer size mismatch");
}

Image downsample(const Image& img, int factor) {
    if (factor != 2 && factor != 4) throw ContractError("downsample: factor must be 2 or 4");
    if (img.height % factor != 0 || img.width % factor != 0)
        throw DimensionError("downsample: dimensions " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + " not divisible by " + std::to_string(factor));
    const int oh = img.height / factor, ow = img.width / factor;
    Image out(oh, ow);
    const double sy = static_cast<double>(img.height) / oh;
    const double sx = static_cast<double>(img.width) / ow;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double fy = (y + 0.5) * sy - 0.5;
            double fx = (x + 0.5) * sx - 0.5;
            if (fy < 0) fy = 0;
            if (fx < 0) fx = 0;
            if (fy > img.height - 1) fy = img.height - 1;
            if (fx > img.width - 1) fx = img.width - 1;
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
            const double wy = fy - y0, wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                                 wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
                float vf = static_cast<float>(v);
                out.at(y, x, c) = vf < 0.0f ? 0.0f : (vf > 1.0f ? 1.0f : vf);
            }
        }
    return out;
}

Image pad_to_multiple(const Image& img, int multiple) {
    const int nh = (img.height + multiple - 1) / multiple * multiple;
    const int nw = (img.width + multiple - 1) / multiple * multiple;
    if (nh == img.height && nw == img.width) return img;
    const int pb = nh - img.height, pr = nw - img.width;
    if (pb >= img.height || pr >= img.width)
        throw DimensionError("pad_to_multiple: image too small to reflect-pad to multiple of " +
                             std::to_string(multiple));
    Image out(nh, nw);
    auto reflect = [](int i, int n) {
        if (i >= n) i = 2 * n - 2 - i;
        return i;
    };
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(reflect(y, img.height), reflect(x, img.width), c);
    return out;
}

Image crop_image(const Image& img, int top, int left, int h, int w) {
    if (top < 0 || left < 0 || top + h > img.height || left + w > img.width)
        throw DimensionError("crop_image: window out of bounds");
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(top + y, left + x, c);
    return out;
}

}  // namespace msgnn
