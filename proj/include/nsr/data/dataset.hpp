#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/image.hpp"
#include "nsr/render/camera.hpp"

namespace nsr {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error(ErrorCode::parse, "unknown split '" + s + "'");
}

/// Uniform scale plus offset taking scene coordinates into the unit cube:
/// unit = scale * (world - origin).
struct Normalization {
    Vec3d origin = Vec3d::Zero();
    double scale = 1.0;

    Vec3d to_unit(const Vec3d& p) const { return scale * (p - origin); }
    Vec3d to_world(const Vec3d& u) const { return u / scale + origin; }

    /// Fits the box [lo, hi] centered into [margin, 1 - margin]^3.
    static Normalization fit(const Vec3d& lo, const Vec3d& hi, double margin = 0.05) {
        const double extent = (hi - lo).maxCoeff();
        require(extent > 0, ErrorCode::config, "normalization: empty bounding box");
        Normalization n;
        n.scale = (1.0 - 2.0 * margin) / extent;
        n.origin = 0.5 * (lo + hi) - Vec3d::Constant(0.5 / n.scale);
        return n;
    }

    Camera apply(const Camera& cam) const {
        Camera out = cam;
        out.camera_to_world.topRightCorner<3, 1>() = to_unit(cam.position());
        return out;
    }
};

/// Posed images; cameras are stored in unit-cube coordinates.
struct PosedImageSet {
    std::vector<Image> images;
    std::vector<Camera> cameras;
    std::vector<Split> splits;
    std::vector<std::string> names;  // file stems, for reports
    Normalization normalization;
    Vec3d background = Vec3d::Ones();

    std::size_t size() const { return images.size(); }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }

    void validate() const {
        require(!images.empty(), ErrorCode::config, "dataset has no images");
        require(images.size() == cameras.size() && images.size() == splits.size(), ErrorCode::contract,
                "dataset: images, cameras and splits differ in count");
        for (std::size_t i = 0; i < images.size(); ++i) {
            require(images[i].same_size(images[0]), ErrorCode::config, "dataset: images differ in size");
            require(cameras[i].intrinsics.width == images[i].width && cameras[i].intrinsics.height == images[i].height,
                    ErrorCode::config, "dataset: camera size does not match image " + std::to_string(i));
            cameras[i].validate();
        }
    }
};

struct PixelBatch {
    std::vector<Ray> rays;
    std::vector<Vec3d> colors;
    std::vector<std::uint32_t> image;
    std::vector<PixelIndex> pixel;

    std::size_t size() const { return rays.size(); }
};

enum class SampleMode {
    uniform,  // independent draws with replacement
    without_replacement,
};

/// m pixels drawn uniformly over all (image, pixel) pairs of the train split.
/// The draw depends only on (seed, step).
inline PixelBatch sample_pixel_batch(const PosedImageSet& set, std::size_t m, std::uint64_t seed, std::uint64_t step,
                                     SampleMode mode = SampleMode::uniform, const Bounds& bounds = Bounds{}) {
    require(m >= 1, ErrorCode::contract, "sample_pixel_batch: m must be >= 1");
    const auto train = set.indices(Split::train);
    require(!train.empty(), ErrorCode::config, "dataset has no training images");
    const std::uint64_t per_image = set.images[train[0]].pixels();
    const std::uint64_t total = per_image * train.size();
    Rng rng(mix_seed(seed, 0xba7c, step));

    std::vector<std::uint64_t> flat(m);
    if (mode == SampleMode::uniform) {
        for (auto& f : flat) f = uniform_index(rng, total);
    } else {
        require(m <= total, ErrorCode::contract, "sample_pixel_batch: m exceeds the pixel count");
        // partial Fisher-Yates over a lazily materialized permutation
        std::vector<std::uint64_t> perm(total);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            const std::uint64_t j = i + uniform_index(rng, total - i);
            std::swap(perm[i], perm[j]);
            flat[i] = perm[i];
        }
    }

    PixelBatch b;
    b.rays.reserve(m);
    const int w = set.images[train[0]].width;
    for (std::uint64_t f : flat) {
        const std::size_t img = train[f / per_image];
        const std::uint64_t p = f % per_image;
        const PixelIndex px{int(p % std::uint64_t(w)), int(p / std::uint64_t(w))};
        b.rays.push_back(make_ray(set.cameras[img], px.x + 0.5, px.y + 0.5, bounds));
        b.colors.push_back(set.images[img].pixel(px.x, px.y));
        b.image.push_back(std::uint32_t(img));
        b.pixel.push_back(px);
    }
    return b;
}

} // namespace nsr
