#pragma once

#include <array>
#include <cstdio>
#include <png.h>

#include "tensor.hpp"

namespace clipvos {

// VOC/DAVIS-style 256-entry palette: object id -> stable color.
inline std::array<unsigned char, 768> davis_palette() {
    std::array<unsigned char, 768> pal{};
    for (int i = 0; i < 256; ++i) {
        int id = i;
        unsigned char r = 0, g = 0, b = 0;
        for (int j = 0; j < 8 && id; ++j) {
            r = (unsigned char)(r | (((id >> 0) & 1) << (7 - j)));
            g = (unsigned char)(g | (((id >> 1) & 1) << (7 - j)));
            b = (unsigned char)(b | (((id >> 2) & 1) << (7 - j)));
            id >>= 3;
        }
        pal[(size_t)i * 3 + 0] = r;
        pal[(size_t)i * 3 + 1] = g;
        pal[(size_t)i * 3 + 2] = b;
    }
    return pal;
}

namespace pngdet {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace pngdet

// labels: [H, W], integer values 0..255, written as 8-bit indexed palette.
inline void write_indexed_png(const std::string& path, const Tensor& labels) {
    if (labels.ndim() != 2) throw std::invalid_argument("write_indexed_png: expects [H,W]");
    const int H = labels.dim(0), W = labels.dim(1);
    pngdet::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, (png_uint_32)W, (png_uint_32)H, 8, PNG_COLOR_TYPE_PALETTE,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    auto pal = davis_palette();
    png_set_PLTE(png, info, reinterpret_cast<png_colorp>(pal.data()), 256);
    std::vector<unsigned char> row((size_t)W);
    png_write_info(png, info);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double v = labels.at(y, x);
            if (v < 0.0 || v > 255.0 || v != std::floor(v))
                throw std::invalid_argument("write_indexed_png: label out of 0..255 range");
            row[(size_t)x] = (unsigned char)v;
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads an indexed-palette (or 8-bit gray) PNG as integer labels [H, W].
inline Tensor read_indexed_png(const std::string& path) {
    pngdet::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng read error: " + path);
    }
    png_init_io(png, fp.get());
    // PACKING unpacks 1/2/4-bit indices to one byte each without expanding the palette
    png_read_png(png, info, PNG_TRANSFORM_PACKING, nullptr);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_indexed_png: not an indexed or gray image: " + path);
    }
    const int H = (int)png_get_image_height(png, info);
    const int W = (int)png_get_image_width(png, info);
    png_bytepp rows = png_get_rows(png, info);
    Tensor out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(y, x) = (double)rows[y][x];
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

// frame: [3, H, W] in [0, 1], written as 8-bit RGB.
inline void write_rgb_png(const std::string& path, const Tensor& frame) {
    if (frame.ndim() != 3 || frame.dim(0) != 3)
        throw std::invalid_argument("write_rgb_png: expects [3,H,W]");
    const int H = frame.dim(1), W = frame.dim(2);
    pngdet::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, (png_uint_32)W, (png_uint_32)H, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row((size_t)W * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = frame.data[((size_t)c * H + y) * W + x];
                v = std::min(std::max(v, 0.0), 1.0);
                row[(size_t)x * 3 + c] = (unsigned char)std::lround(v * 255.0);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads any PNG as [3, H, W] in [0, 1] (palette/gray expanded, alpha dropped).
inline Tensor read_rgb_png(const std::string& path) {
    pngdet::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng read error: " + path);
    }
    png_init_io(png, fp.get());
    png_read_png(png, info,
                 PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND |
                     PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_GRAY_TO_RGB,
                 nullptr);
    const int H = (int)png_get_image_height(png, info);
    const int W = (int)png_get_image_width(png, info);
    const int channels = (int)png_get_channels(png, info);
    if (channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_rgb_png: unexpected channel count in " + path);
    }
    png_bytepp rows = png_get_rows(png, info);
    Tensor out({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                out.data[((size_t)c * H + y) * W + x] = rows[y][(size_t)x * 3 + c] / 255.0;
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

} // namespace clipvos
