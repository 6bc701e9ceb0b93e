#pragma once

#include <cstddef>
#include <vector>

#include "nsr/common.hpp"

namespace nsr {

/// Linear RGB image, row-major, values nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;  // height * width * 3

    Image() = default;
    Image(int w, int h, float fill = 0.0f) : width(w), height(h), data(std::size_t(w) * h * 3, fill) {}

    std::size_t pixels() const { return std::size_t(width) * height; }
    float& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }

    Vec3d pixel(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
    void set_pixel(int x, int y, const Vec3d& rgb) {
        for (int c = 0; c < 3; ++c) at(x, y, c) = static_cast<float>(rgb[c]);
    }

    bool same_size(const Image& o) const { return width == o.width && height == o.height; }
    friend bool operator==(const Image&, const Image&) = default;
};

} // namespace nsr
