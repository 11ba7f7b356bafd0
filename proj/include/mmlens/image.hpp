#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mmlens {

// 8-bit RGB image, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;   // width * height * 3

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}

    uint8_t* px(int x, int y) { return rgb.data() + 3 * (static_cast<size_t>(y) * width + x); }
    const uint8_t* px(int x, int y) const {
        return rgb.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        uint8_t* p = px(x, y);
        p[0] = r; p[1] = g; p[2] = b;
    }
    bool operator==(const Image&) const = default;
};

std::vector<uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

Image resize_nearest(const Image& img, int w, int h);

// Fraction of pixels within `tol` max-channel distance of the given color.
double color_presence(const Image& img, uint8_t r, uint8_t g, uint8_t b, int tol = 60);

// Most frequent color after 32-level quantization, returned un-quantized as
// the mean of pixels in the winning bin.
void dominant_color(const Image& img, uint8_t& r, uint8_t& g, uint8_t& b);

// Fraction of horizontally adjacent pixel pairs that are exactly equal.
// Flat, posterized images score high; textured ones score low.
double flatness(const Image& img);

// Mean absolute difference between 16x16 downsampled grayscale thumbnails,
// in [0, 255]. A cheap identity proxy.
double thumbnail_distance(const Image& a, const Image& b);

} // namespace mmlens
