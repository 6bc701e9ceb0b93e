#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include <png.h>

#include "nsr/common.hpp"
#include "nsr/image.hpp"

namespace nsr {

/// Nearest 8-bit level of a [0,1] value (clamped).
inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Replaces every value by its 8-bit level k / 255 so that writing and
/// reading back a PNG is lossless.
inline void quantize(Image& img) {
    for (auto& v : img.data) v = static_cast<float>(to_byte(v) / 255.0);
}

/// 8-bit RGB PNG.
inline void write_png(const Image& img, const std::filesystem::path& path) {
    std::vector<png_byte> buf(img.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(img.data[i]);
    png_image info{};
    info.version = PNG_IMAGE_VERSION;
    info.width = png_uint_32(img.width);
    info.height = png_uint_32(img.height);
    info.format = PNG_FORMAT_RGB;
    const int ok = png_image_write_to_file(&info, path.c_str(), 0, buf.data(), 0, nullptr);
    const std::string msg = info.message;
    png_image_free(&info);
    require(ok != 0, ErrorCode::io, "cannot write " + path.string() + ": " + msg);
}

/// Reads any PNG as RGB in [0,1]; an alpha channel is composited over `background`.
inline Image read_png(const std::filesystem::path& path, const Vec3d& background = Vec3d::Ones()) {
    require(std::filesystem::exists(path), ErrorCode::missing_image, "missing image " + path.string());
    png_image info{};
    info.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&info, path.c_str())) {
        const std::string msg = info.message;
        png_image_free(&info);
        throw Error(ErrorCode::parse, "cannot decode " + path.string() + ": " + msg);
    }
    info.format = PNG_FORMAT_RGBA;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(info));
    const int ok = png_image_finish_read(&info, nullptr, buf.data(), 0, nullptr);
    const std::string msg = info.message;
    png_image_free(&info);
    require(ok != 0, ErrorCode::parse, "cannot decode " + path.string() + ": " + msg);

    Image img(int(info.width), int(info.height));
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        const png_byte* p = buf.data() + 4 * i;
        const double a = p[3] / 255.0;
        for (int c = 0; c < 3; ++c) {
            const double v = p[c] / 255.0;
            img.data[3 * i + c] = static_cast<float>(p[3] == 255 ? v : a * v + (1.0 - a) * background[c]);
        }
    }
    return img;
}

} // namespace nsr
