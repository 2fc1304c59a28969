#pragma once

// 8-bit RGB / grayscale PNG read and write through libpng.

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "signdiff/tensor.hpp"

namespace signdiff {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Writes a (c, H, W) image with c in {1, 3} and values in [0, 1].
inline void write_png(const std::filesystem::path& path, const Tensor& image) {
    require(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3),
            "write_png: expected (1|3, H, W), got " + shape_str(image.shape()));
    const std::size_t c = image.dim(0), H = image.dim(1), W = image.dim(2);
    detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_byte> rows(H * W * c);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t k = 0; k < c; ++k) {
                const double v = std::min(1.0, std::max(0.0, image[(k * H + y) * W + x]));
                rows[(y * W + x) * c + k] = static_cast<png_byte>(std::lround(v * 255.0));
            }
    std::vector<png_bytep> ptrs(H);
    for (std::size_t y = 0; y < H; ++y) ptrs[y] = rows.data() + y * W * c;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads any PNG as (3, H, W) in [0, 1]; palette, grayscale and 16-bit
/// inputs are expanded, alpha is dropped.
inline Tensor read_png(const std::filesystem::path& path) {
    detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError(path.string() + " is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_byte> rows;
    std::vector<png_bytep> ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng failed reading " + path.string());
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const std::size_t W = png_get_image_width(png, info), H = png_get_image_height(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    rows.resize(H * stride);
    ptrs.resize(H);
    for (std::size_t y = 0; y < H; ++y) ptrs[y] = rows.data() + y * stride;
    png_read_image(png, ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor img({3, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t k = 0; k < 3; ++k) img[(k * H + y) * W + x] = rows[y * stride + x * 3 + k] / 255.0;
    return img;
}

}  // namespace signdiff
