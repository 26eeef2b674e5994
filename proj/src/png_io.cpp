#include "msgnn/png_io.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "msgnn/errors.hpp"

namespace msgnn {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

}  // namespace

Image load_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (raw.size() < 8 || std::memcmp(raw.data(), kSignature, 8) != 0)
        throw PngFormatError(path + ": not a PNG file");

    std::size_t pos = 8;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    bool seen_ihdr = false, seen_iend = false;
    std::vector<unsigned char> idat;

    while (pos + 8 <= raw.size()) {
        const std::uint32_t len = read_u32(raw.data() + pos);
        if (pos + 12 + len > raw.size()) throw PngFormatError(path + ": truncated chunk");
        char type[5] = {0};
        std::memcpy(type, raw.data() + pos + 4, 4);
        const unsigned char* data = raw.data() + pos + 8;

        if (std::strcmp(type, "IHDR") == 0) {
            if (len != 13) throw PngFormatError(path + ": bad IHDR length");
            width = static_cast<int>(read_u32(data));
            height = static_cast<int>(read_u32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) throw PngFormatError(path + ": interlaced PNG not supported");
            seen_ihdr = true;
        } else if (std::strcmp(type, "IDAT") == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::strcmp(type, "IEND") == 0) {
            seen_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || !seen_iend) throw PngFormatError(path + ": missing IHDR or IEND");
    if (width <= 0 || height <= 0) throw PngFormatError(path + ": bad dimensions");
    if (bit_depth != 8) throw PngDepthError(path + ": unsupported bit depth " + std::to_string(bit_depth));
    if (color_type != 2 && color_type != 6)
        throw PngFormatError(path + ": unsupported color type " + std::to_string(color_type) +
                             " (need RGB or RGBA)");

    const int bpp = color_type == 6 ? 4 : 3;
    const std::size_t stride = static_cast<std::size_t>(width) * bpp;
    const std::size_t expect = (stride + 1) * static_cast<std::size_t>(height);
    std::vector<unsigned char> scan(expect);
    uLongf out_len = static_cast<uLongf>(expect);
    const int zrc = uncompress(scan.data(), &out_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || out_len != expect) throw PngFormatError(path + ": corrupt image data");

    // Undo per-row filters in place over a defiltered copy.
    std::vector<unsigned char> px(stride * static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        const unsigned char filter = scan[(stride + 1) * static_cast<std::size_t>(y)];
        const unsigned char* src = scan.data() + (stride + 1) * static_cast<std::size_t>(y) + 1;
        unsigned char* dst = px.data() + stride * static_cast<std::size_t>(y);
        const unsigned char* up = y > 0 ? px.data() + stride * static_cast<std::size_t>(y - 1) : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw PngFormatError(path + ": unknown filter type " + std::to_string(filter));
            }
            dst[i] = static_cast<unsigned char>(v & 0xFF);
        }
    }

    Image img(height, width);
    for (std::size_t p = 0; p < img.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c)
            img.pixels[p * 3 + c] = static_cast<float>(px[p * bpp + c]) / 255.0f;
    return img;
}

void save_png(const Image& img, const std::string& path) {
    validate_image(img, "save_png");
    const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
    std::vector<unsigned char> scan((stride + 1) * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        unsigned char* row = scan.data() + (stride + 1) * static_cast<std::size_t>(y);
        row[0] = 0;  // filter: none
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = img.at(y, x, c);
                v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                row[1 + x * 3 + c] = static_cast<unsigned char>(v * 255.0f + 0.5f);
            }
    }

    uLongf bound = compressBound(static_cast<uLong>(scan.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, scan.data(), static_cast<uLong>(scan.size()), 6) != Z_OK)
        throw IoError(path + ": compression failed");
    compressed.resize(bound);

    std::vector<unsigned char> out;
    out.insert(out.end(), kSignature, kSignature + 8);

    auto chunk = [&out](const char* type, const std::vector<unsigned char>& body) {
        put_u32(out, static_cast<std::uint32_t>(body.size()));
        const std::size_t crc_start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), body.begin(), body.end());
        const uLong crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
        put_u32(out, static_cast<std::uint32_t>(crc));
    };

    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    chunk("IHDR", ihdr);
    chunk("IDAT", compressed);
    chunk("IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + path);
}

}  // namespace msgnn
