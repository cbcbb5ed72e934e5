#include "uvdiff/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <png.h>

namespace uvdiff {

double sample_bilinear(const Image& im, double sx, double sy, int c) {
    // Shift so integer coordinates land on pixel centers, then clamp.
    const double fx = std::clamp(sx - 0.5, 0.0, double(im.width - 1));
    const double fy = std::clamp(sy - 0.5, 0.0, double(im.height - 1));
    const int x0 = std::clamp(int(fx), 0, std::max(0, im.width - 2));
    const int y0 = std::clamp(int(fy), 0, std::max(0, im.height - 2));
    const int x1 = std::min(x0 + 1, im.width - 1);
    const int y1 = std::min(y0 + 1, im.height - 1);
    const double wx = fx - x0, wy = fy - y0;
    const double v00 = im.at(x0, y0, c), v01 = im.at(x1, y0, c);
    const double v10 = im.at(x0, y1, c), v11 = im.at(x1, y1, c);
    return (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail_state("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail_state("read_png: libpng init failed");
    }
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buf;
    Image im;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail_state("read_png: " + path + " is not a valid PNG");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);
    const int ch = int(png_get_channels(png, info));
    require(ch == 1 || ch == 2 || ch == 3 || ch == 4, "read_png: unsupported channel count");
    const int out_ch = ch == 2 ? 1 : ch; // drop gray-alpha's alpha below
    buf.resize(std::size_t(w) * h * std::size_t(ch));
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + std::size_t(y) * w * std::size_t(ch);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    im = Image::create(int(w), int(h), out_ch);
    for (std::size_t i = 0; i < std::size_t(w) * h; ++i)
        for (int c = 0; c < out_ch; ++c)
            im.px[i * std::size_t(out_ch) + std::size_t(c)] =
                float(buf[i * std::size_t(ch) + std::size_t(c)]) / 255.0f;
    return im;
}

void write_png(const std::string& path, const Image& im) {
    require(im.width > 0 && im.height > 0, "write_png: empty image");
    require(im.channels == 1 || im.channels == 3 || im.channels == 4,
            "write_png: unsupported channel count");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail_state("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail_state("write_png: libpng init failed");
    }
    std::vector<unsigned char> buf(std::size_t(im.width) * im.height * std::size_t(im.channels));
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const float v = std::clamp(im.px[i], 0.0f, 1.0f);
        buf[i] = (unsigned char)std::lround(v * 255.0f);
    }
    std::vector<png_bytep> rows(std::size_t(im.height));
    for (int y = 0; y < im.height; ++y)
        rows[std::size_t(y)] = buf.data() + std::size_t(y) * im.width * std::size_t(im.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail_state("write_png: libpng write failed for " + path);
    }
    png_init_io(png, fp.get());
    const int color = im.channels == 1   ? PNG_COLOR_TYPE_GRAY
                      : im.channels == 3 ? PNG_COLOR_TYPE_RGB
                                         : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(png, info, png_uint_32(im.width), png_uint_32(im.height), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor image_to_tensor(const Image& im) {
    Tensor t(Shape{std::size_t(im.channels), std::size_t(im.height), std::size_t(im.width)});
    float* p = t.mutable_data();
    const std::size_t plane = std::size_t(im.height) * std::size_t(im.width);
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < im.channels; ++c)
            p[std::size_t(c) * plane + i] = im.px[i * std::size_t(im.channels) + std::size_t(c)];
    return t;
}

Image tensor_to_image(const Tensor& t) {
    require(t.rank() == 3, "tensor_to_image: expected [C,H,W]");
    const int c = int(t.extent(0)), h = int(t.extent(1)), w = int(t.extent(2));
    Image im = Image::create(w, h, c);
    const float* p = t.data();
    const std::size_t plane = std::size_t(h) * std::size_t(w);
    for (std::size_t i = 0; i < plane; ++i)
        for (int cc = 0; cc < c; ++cc)
            im.px[i * std::size_t(c) + std::size_t(cc)] = p[std::size_t(cc) * plane + i];
    return im;
}

} // namespace uvdiff
