#pragma once
// Overlay rendering: grayscale slice as RGB PNG with detection and truth
// boxes burned in. Requires zlib.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <zlib.h>

#include "casdet/box.hpp"
#include "casdet/volume.hpp"

namespace casdet {

struct RenderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kDetectionColor{255, 64, 64};
inline constexpr Rgb kTruthColor{64, 255, 64};

struct RgbImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // RGB8, row-major

    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    void set(int x, int y, Rgb c) {
        if (x < 0 || x >= width || y < 0 || y >= height) return;
        std::uint8_t* p = pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
    }
};

inline RgbImage slice_to_image(const Volume4D& vol, int z, int t) {
    RgbImage img(vol.dims.x, vol.dims.y);
    for (int y = 0; y < vol.dims.y; ++y)
        for (int x = 0; x < vol.dims.x; ++x) {
            const auto g = static_cast<std::uint8_t>(std::lround(vol.at(x, y, z, t) * 255.0));
            img.set(x, y, {g, g, g});
        }
    return img;
}

// One-pixel border on the box outline (half-open coordinates).
inline void draw_box(RgbImage& img, const Box& box, Rgb color) {
    const int x0 = static_cast<int>(std::lround(box.x0));
    const int y0 = static_cast<int>(std::lround(box.y0));
    const int x1 = static_cast<int>(std::lround(box.x1)) - 1;
    const int y1 = static_cast<int>(std::lround(box.y1)) - 1;
    for (int x = x0; x <= x1; ++x) {
        img.set(x, y0, color);
        img.set(x, y1, color);
    }
    for (int y = y0; y <= y1; ++y) {
        img.set(x0, y, color);
        img.set(x1, y, color);
    }
}

namespace pngdetail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void write_chunk(std::ofstream& out, const char type[4],
                        const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> buf;
    put_u32(buf, static_cast<std::uint32_t>(data.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), data.begin(), data.end());
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(::crc32(0L, reinterpret_cast<const Bytef*>(type), 4),
                data.empty() ? nullptr : data.data(), static_cast<uInt>(data.size())));
    put_u32(buf, crc);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace pngdetail

inline void write_png(const RgbImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RenderError("cannot open " + path.string() + " for writing");
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngdetail::write_chunk(out, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (img.width * 3 + 1));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(img.width) * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw RenderError("zlib compression failed");
    comp.resize(comp_len);
    pngdetail::write_chunk(out, "IDAT", comp);
    pngdetail::write_chunk(out, "IEND", {});
    if (!out) throw RenderError("write failure: " + path.string());
}

}  // namespace casdet
