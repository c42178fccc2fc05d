#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "picodiff/tensor.hpp"

namespace picodiff {

// RGB image in [0,1], channel-planar ([3][H][W]); everything in the pipeline
// is 32x32.
struct Image {
    static constexpr int kRes = 32;

    Image() : width(kRes), height(kRes), pixels(3 * kRes * kRes, 0.0f) {}
    Image(int w, int h) : width(w), height(h), pixels(3 * static_cast<size_t>(w) * h, 0.0f) {}

    int width;
    int height;
    std::vector<float> pixels;

    float& at(int c, int y, int x) { return pixels[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const {
        return pixels[(static_cast<size_t>(c) * height + y) * width + x];
    }

    bool operator==(const Image& other) const {
        return width == other.width && height == other.height && pixels == other.pixels;
    }
};

// Snaps to the 8-bit grid the PNG round-trip lands on.
Image quantize_u8(const Image& img);

uint8_t to_u8(float v);
float from_u8(uint8_t v);

void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

Tensor image_to_tensor(const Image& img);               // [3,H,W]
Image tensor_to_image(const Tensor& t, int batch_idx);  // from [B,3,H,W] or [3,H,W], clipped to [0,1]

double max_abs_diff(const Image& a, const Image& b);

// Writes via temp file + rename so readers never see partial content.
void atomic_write_file(const std::string& path, const std::string& contents);

}  // namespace picodiff
