#include "image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "errors.hpp"

namespace ffabic {

Tensor read_png(const std::string& path) {
    FILE* probe = std::fopen(path.c_str(), "rb");
    if (!probe) throw io_error("cannot open " + path);
    std::fclose(probe);

    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw format_error(path + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf((size_t)PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw format_error(path + ": " + msg);
    }

    int h = (int)img.height, w = (int)img.width;
    Tensor out({3, h, w});
    size_t plane = (size_t)h * w;
    for (size_t i = 0; i < plane; ++i)
        for (size_t c = 0; c < 3; ++c) out.v[c * plane + i] = (float)buf[i * 3 + c] / 255.0f;
    return out;
}

void write_png(const std::string& path, const Tensor& img) {
    if (img.ndim() != 3 || (img.shape[0] != 3 && img.shape[0] != 1))
        throw input_error("writable images are [3,H,W] or [1,H,W]");
    int ch = img.shape[0], h = img.shape[1], w = img.shape[2];
    size_t plane = (size_t)h * w;

    std::vector<uint8_t> buf(plane * (size_t)ch);
    for (size_t i = 0; i < plane; ++i)
        for (int c = 0; c < ch; ++c) {
            float v = img.v[(size_t)c * plane + i];
            v = v < 0.0f ? 0.0f : v > 1.0f ? 1.0f : v;
            buf[i * (size_t)ch + (size_t)c] = (uint8_t)std::lround(v * 255.0f);
        }

    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = (png_uint_32)w;
    out.height = (png_uint_32)h;
    out.format = ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&out, path.c_str(), 0, buf.data(), 0, nullptr))
        throw io_error(path + ": " + out.message);
}

}  // namespace ffabic
