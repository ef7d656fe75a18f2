#include "vidfuse/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>

namespace vidfuse {

void write_png_rgb8(const std::string& path, int64_t width, int64_t height,
                    const std::vector<uint8_t>& rgb) {
    if (static_cast<int64_t>(rgb.size()) != width * height * 3)
        throw contract_violation("write_png_rgb8: buffer size mismatch");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw config_error("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw config_error("libpng failure writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

void write_frame_grid(const std::string& path, const VideoTensor& video) {
    if (video.space != Space::Pixel)
        throw contract_violation("write_frame_grid: expects a pixel-space video");
    int64_t F = video.frames(), C = video.channels(), H = video.height(), W = video.width();
    int64_t gw = F * W + (F - 1);
    std::vector<uint8_t> rgb(static_cast<size_t>(gw * H * 3), 30);
    for (int64_t f = 0; f < F; ++f)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t gx = f * (W + 1) + x;
                for (int64_t c = 0; c < 3; ++c) {
                    double v = video.data[((f * C + std::min(c, C - 1)) * H + y) * W + x];
                    double u = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
                    rgb[static_cast<size_t>((y * gw + gx) * 3 + c)] =
                        static_cast<uint8_t>(u * 255.0 + 0.5);
                }
            }
    write_png_rgb8(path, gw, H, rgb);
}

}  // namespace vidfuse
