#include "picodiff/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "picodiff/errors.hpp"

namespace picodiff {

uint8_t to_u8(float v) {
    float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

float from_u8(uint8_t v) { return static_cast<float>(v) / 255.0f; }

Image quantize_u8(const Image& img) {
    Image out(img.width, img.height);
    for (size_t i = 0; i < img.pixels.size(); ++i) out.pixels[i] = from_u8(to_u8(img.pixels[i]));
    return out;
}

void write_png(const std::string& path, const Image& img) {
    std::string tmp = path + ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + tmp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        std::fclose(fp);
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            row[x * 3 + 0] = to_u8(img.at(0, y, x));
            row[x * 3 + 1] = to_u8(img.at(1, y, x));
            row[x * 3 + 2] = to_u8(img.at(2, y, x));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw IoError("cannot rename " + tmp + " to " + path);
    }
}

Image read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        std::fclose(fp);
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    int w = static_cast<int>(png_get_image_width(png, info));
    int h = static_cast<int>(png_get_image_height(png, info));
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    Image img(w, h);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            img.at(0, y, x) = from_u8(row[x * 3 + 0]);
            img.at(1, y, x) = from_u8(row[x * 3 + 1]);
            img.at(2, y, x) = from_u8(row[x * 3 + 2]);
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

Tensor image_to_tensor(const Image& img) {
    return Tensor::from({3, img.height, img.width}, img.pixels);
}

Image tensor_to_image(const Tensor& t, int batch_idx) {
    const float* src = nullptr;
    int h = 0, w = 0;
    if (t.ndim() == 4) {
        h = t.shape()[2];
        w = t.shape()[3];
        src = t.data() + static_cast<int64_t>(batch_idx) * 3 * h * w;
    } else if (t.ndim() == 3) {
        h = t.shape()[1];
        w = t.shape()[2];
        src = t.data();
    } else {
        throw ShapeError("tensor_to_image: expects [B,3,H,W] or [3,H,W], got " + shape_str(t.shape()));
    }
    Image img(w, h);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        float v = src[i];
        img.pixels[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    return img;
}

double max_abs_diff(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) return 1e9;
    double m = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        m = std::max(m, std::fabs(static_cast<double>(a.pixels[i]) - b.pixels[i]));
    }
    return m;
}

void atomic_write_file(const std::string& path, const std::string& contents) {
    std::string tmp = path + ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + tmp);
    if (!contents.empty() && std::fwrite(contents.data(), 1, contents.size(), fp) != contents.size()) {
        std::fclose(fp);
        throw IoError("short write: " + tmp);
    }
    std::fclose(fp);
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw IoError("cannot rename " + tmp + " to " + path);
    }
}

}  // namespace picodiff
