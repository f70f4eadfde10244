#pragma once

#include <cstdint>
#include <vector>

namespace deepview {

/// 8-bit RGB pixels, row-major from the top-left corner.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    RgbImage() = default;
    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 255) {}

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

/// Encodes an RGB image (or a grayscale one when `channels` is 1) as a
/// non-interlaced 8-bit PNG.
std::vector<std::uint8_t> encode_png(const std::vector<std::uint8_t>& pixels, int width, int height,
                                     int channels = 3);

inline std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    return encode_png(image.pixels, image.width, image.height, 3);
}

}  // namespace deepview
