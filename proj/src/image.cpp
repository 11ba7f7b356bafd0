#include "mmlens/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "mmlens/errors.hpp"

namespace mmlens {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& body) {
    put_u32(out, static_cast<uint32_t>(body.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    uint32_t crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace

std::vector<uint8_t> encode_png(const Image& img) {
    if (img.width <= 0 || img.height <= 0)
        throw ShapeMismatch("encode_png: empty image");
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<uint8_t> out(sig, sig + 8);

    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(img.width));
    put_u32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // no interlace
    put_chunk(out, "IHDR", ihdr);

    // filter 0 (None) on every scanline
    const size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.rgb.begin() + y * stride, img.rgb.begin() + (y + 1) * stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("encode_png: zlib compression failed");
    comp.resize(bound);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});
    return out;
}

Image decode_png(const std::vector<uint8_t>& bytes) {
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw IoError("decode_png: not a png");

    size_t pos = 8;
    uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size())
            throw IoError("decode_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* body = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = get_u32(body);
            height = get_u32(body + 4);
            bit_depth = body[8];
            color_type = body[9];
            if (body[12] != 0)
                throw IoError("decode_png: interlaced images unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), body, body + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (width == 0 || height == 0)
        throw IoError("decode_png: missing IHDR");
    if (bit_depth != 8 || (color_type != 2 && color_type != 6 && color_type != 0))
        throw IoError("decode_png: only 8-bit gray/RGB/RGBA supported");

    const int channels = color_type == 2 ? 3 : (color_type == 6 ? 4 : 1);
    const size_t stride = static_cast<size_t>(width) * channels;
    std::vector<uint8_t> raw((stride + 1) * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("decode_png: zlib inflate failed");

    // undo per-scanline filters in place
    std::vector<uint8_t> prev(stride, 0);
    Image img(static_cast<int>(width), static_cast<int>(height));
    std::vector<uint8_t> cur(stride);
    for (uint32_t y = 0; y < height; ++y) {
        const uint8_t filter = raw[y * (stride + 1)];
        const uint8_t* src = raw.data() + y * (stride + 1) + 1;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(channels) ? cur[i - channels] : 0;
            int b = prev[i];
            int c = i >= static_cast<size_t>(channels) ? prev[i - channels] : 0;
            int x = src[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += paeth(a, b, c); break;
                default: throw IoError("decode_png: bad filter byte");
            }
            cur[i] = static_cast<uint8_t>(x);
        }
        for (uint32_t x = 0; x < width; ++x) {
            const uint8_t* p = cur.data() + x * channels;
            if (channels == 1)
                img.set(static_cast<int>(x), static_cast<int>(y), p[0], p[0], p[0]);
            else
                img.set(static_cast<int>(x), static_cast<int>(y), p[0], p[1], p[2]);
        }
        prev = cur;
    }
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    auto bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

Image resize_nearest(const Image& img, int w, int h) {
    Image out(w, h);
    for (int y = 0; y < h; ++y) {
        int sy = static_cast<int>(static_cast<int64_t>(y) * img.height / h);
        for (int x = 0; x < w; ++x) {
            int sx = static_cast<int>(static_cast<int64_t>(x) * img.width / w);
            const uint8_t* p = img.px(sx, sy);
            out.set(x, y, p[0], p[1], p[2]);
        }
    }
    return out;
}

double color_presence(const Image& img, uint8_t r, uint8_t g, uint8_t b, int tol) {
    if (img.width == 0 || img.height == 0) return 0.0;
    size_t hit = 0, total = static_cast<size_t>(img.width) * img.height;
    for (size_t i = 0; i < total; ++i) {
        const uint8_t* p = img.rgb.data() + 3 * i;
        int d = std::max({std::abs(p[0] - r), std::abs(p[1] - g), std::abs(p[2] - b)});
        if (d <= tol) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(total);
}

void dominant_color(const Image& img, uint8_t& r, uint8_t& g, uint8_t& b) {
    std::map<uint32_t, std::array<uint64_t, 4>> bins;   // key -> (count, sum r, g, b)
    size_t total = static_cast<size_t>(img.width) * img.height;
    for (size_t i = 0; i < total; ++i) {
        const uint8_t* p = img.rgb.data() + 3 * i;
        uint32_t key = (static_cast<uint32_t>(p[0] >> 5) << 6) |
                       (static_cast<uint32_t>(p[1] >> 5) << 3) | (p[2] >> 5);
        auto& bin = bins[key];
        bin[0] += 1;
        bin[1] += p[0];
        bin[2] += p[1];
        bin[3] += p[2];
    }
    uint64_t best = 0;
    r = g = b = 0;
    for (const auto& [key, bin] : bins) {
        if (bin[0] > best) {
            best = bin[0];
            r = static_cast<uint8_t>(bin[1] / bin[0]);
            g = static_cast<uint8_t>(bin[2] / bin[0]);
            b = static_cast<uint8_t>(bin[3] / bin[0]);
        }
    }
}

double flatness(const Image& img) {
    if (img.width < 2) return 1.0;
    size_t equal = 0, total = 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x + 1 < img.width; ++x) {
            const uint8_t* p = img.px(x, y);
            const uint8_t* q = img.px(x + 1, y);
            if (p[0] == q[0] && p[1] == q[1] && p[2] == q[2]) ++equal;
            ++total;
        }
    }
    return total ? static_cast<double>(equal) / static_cast<double>(total) : 1.0;
}

double thumbnail_distance(const Image& a, const Image& b) {
    Image ta = resize_nearest(a, 16, 16);
    Image tb = resize_nearest(b, 16, 16);
    double acc = 0.0;
    for (int i = 0; i < 16 * 16; ++i) {
        const uint8_t* p = ta.rgb.data() + 3 * i;
        const uint8_t* q = tb.rgb.data() + 3 * i;
        double ga = (p[0] + p[1] + p[2]) / 3.0;
        double gb = (q[0] + q[1] + q[2]) / 3.0;
        acc += std::abs(ga - gb);
    }
    return acc / 256.0;
}

} // namespace mmlens
