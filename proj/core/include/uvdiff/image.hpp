#pragma once

#include <string>
#include <vector>

#include "uvdiff/tensor.hpp"

namespace uvdiff {

// Interleaved float image in [0,1], row-major [H][W][C], top row first.
// Continuous coordinates put the center of pixel (x, y) at (x+0.5, y+0.5).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0; // 1, 3 or 4
    std::vector<float> px;

    static Image create(int w, int h, int c, float fill = 0.0f) {
        require(w > 0 && h > 0 && (c == 1 || c == 3 || c == 4), "Image: bad dimensions");
        Image im;
        im.width = w;
        im.height = h;
        im.channels = c;
        im.px.assign(std::size_t(w) * std::size_t(h) * std::size_t(c), fill);
        return im;
    }

    float& at(int x, int y, int c) {
        return px[(std::size_t(y) * width + std::size_t(x)) * channels + std::size_t(c)];
    }
    float at(int x, int y, int c) const {
        return px[(std::size_t(y) * width + std::size_t(x)) * channels + std::size_t(c)];
    }
    bool in_bounds(double sx, double sy) const {
        return sx >= 0.0 && sy >= 0.0 && sx <= double(width) && sy <= double(height);
    }
};

// Bilinear sample at continuous (sx, sy); edge-clamped.
double sample_bilinear(const Image& im, double sx, double sy, int c);

// 8-bit PNG round trip (gray, RGB or RGBA).
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& im);

// [C,H,W] tensor <-> interleaved image.
Tensor image_to_tensor(const Image& im);
Image tensor_to_image(const Tensor& t);

} // namespace uvdiff
