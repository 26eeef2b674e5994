#pragma once

#include <string>

#include "msgnn/image.hpp"

namespace msgnn {

// 8-bit RGB/RGBA PNG only (alpha dropped on load). Load maps v -> v/255;
// save rounds half-up. Non-8-bit depth raises PngDepthError, structural
// problems PngFormatError, filesystem problems IoError.
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

}  // namespace msgnn
