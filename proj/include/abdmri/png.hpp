#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "abdmri/errors.hpp"
#include "abdmri/image_ops.hpp"

namespace abdmri {

// Minimal RGB8 raster for QC overlay plots.
struct RgbImage {
    int nx = 0, ny = 0;
    std::vector<std::uint8_t> pix;  // 3 bytes per pixel, row-major, y down

    RgbImage() = default;
    RgbImage(int w, int h) : nx(w), ny(h), pix(static_cast<std::size_t>(w) * h * 3, 0) {}

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || y < 0 || x >= nx || y >= ny) return;
        const std::size_t p = (static_cast<std::size_t>(y) * nx + x) * 3;
        pix[p] = r;
        pix[p + 1] = g;
        pix[p + 2] = b;
    }
};

namespace detail {

inline void png_chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& data) {
    const auto be32 = [](std::uint32_t v) {
        return std::array<std::uint8_t, 4>{static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                                           static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    };
    const auto len = be32(static_cast<std::uint32_t>(data.size()));
    out.write(reinterpret_cast<const char*>(len.data()), 4);
    out.write(type, 4);
    if (!data.empty()) out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    const auto crc_be = be32(crc);
    out.write(reinterpret_cast<const char*>(crc_be.data()), 4);
}

}  // namespace detail

inline void write_png(const RgbImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::io_failure, "cannot create " + path.string());
    const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr(13, 0);
    const auto put32 = [&](std::size_t off, std::uint32_t v) {
        ihdr[off] = static_cast<std::uint8_t>(v >> 24);
        ihdr[off + 1] = static_cast<std::uint8_t>(v >> 16);
        ihdr[off + 2] = static_cast<std::uint8_t>(v >> 8);
        ihdr[off + 3] = static_cast<std::uint8_t>(v);
    };
    put32(0, static_cast<std::uint32_t>(img.nx));
    put32(4, static_cast<std::uint32_t>(img.ny));
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // truecolor
    detail::png_chunk(out, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.ny) * (1 + static_cast<std::size_t>(img.nx) * 3));
    for (int y = 0; y < img.ny; ++y) {
        raw.push_back(0);
        const std::size_t off = static_cast<std::size_t>(y) * img.nx * 3;
        raw.insert(raw.end(), img.pix.begin() + static_cast<std::ptrdiff_t>(off),
                   img.pix.begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(img.nx) * 3));
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    require(compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) == Z_OK,
            ErrorCode::io_failure, "deflate failed");
    comp.resize(comp_len);
    detail::png_chunk(out, "IDAT", comp);
    detail::png_chunk(out, "IEND", {});
    require(out.good(), ErrorCode::io_failure, "short write to " + path.string());
}

// Grayscale base from a 2D image with optional gain normalization.
inline RgbImage grayscale_base(const Image2& img) {
    RgbImage out(img.nx, img.ny);
    float vmax = 0.0f;
    for (const float v : img.v) vmax = std::max(vmax, v);
    const float scale = vmax > 0.0f ? 255.0f / vmax : 0.0f;
    for (int y = 0; y < img.ny; ++y)
        for (int x = 0; x < img.nx; ++x) {
            // image y points up anatomically; PNG y runs down
            const auto v = static_cast<std::uint8_t>(std::min(255.0f, img.at(x, img.ny - 1 - y) * scale));
            out.set(x, y, v, v, v);
        }
    return out;
}

}  // namespace abdmri
