#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/data/dataset.hpp"
#include "nsr/data/png.hpp"
#include "nsr/data/scene.hpp"
#include "nsr/mesh/marching_cubes.hpp"

namespace nsr {

struct SyntheticConfig {
    int views = 20;      // train views
    int val_views = 4;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 0;
    double distance = 1.5;  // camera distance from the cube center
    double fov_x = 0.75;    // radians
    int gt_resolution = 512;
    int threads = 1;
    // sphere tracing
    int max_steps = 1000;
    double hit_epsilon = 1e-6;

    void validate() const {
        require(views >= 1, ErrorCode::config, "synthetic: views must be >= 1");
        require(val_views >= 0, ErrorCode::config, "synthetic: val_views must be >= 0");
        require(width >= 1 && height >= 1, ErrorCode::config, "synthetic: image size must be positive");
        require(distance > 0.9 && fov_x > 0 && fov_x < M_PI, ErrorCode::config,
                "synthetic: cameras must sit outside the unit cube with a valid field of view");
        require(gt_resolution >= 8, ErrorCode::config, "synthetic: gt_resolution must be >= 8");
    }
};

struct SyntheticData {
    PosedImageSet set;
    TriangleMesh ground_truth;  // unit-cube coordinates
    std::size_t unconverged_pixels = 0;
};

/// `n` directions spread quasi-uniformly over the sphere (Fibonacci lattice),
/// rotated by a random rotation drawn from `seed`.
inline std::vector<Vec3d> fibonacci_directions(int n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::Quaterniond q(normal01(rng), normal01(rng), normal01(rng), normal01(rng));
    q.normalize();
    const Eigen::Matrix3d rot = q.toRotationMatrix();
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    std::vector<Vec3d> out;
    out.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        out.push_back(rot * Vec3d(r * std::cos(phi), r * std::sin(phi), z));
    }
    return out;
}

struct TraceResult {
    bool hit = false;
    bool converged = true;
    Vec3d point = Vec3d::Zero();
};

/// Sphere tracing inside the unit cube. Rays that neither reach the surface
/// nor leave the cube within `max_steps` are reported as unconverged.
inline TraceResult sphere_trace(const AnalyticScene& scene, const Ray& ray, int max_steps, double eps) {
    TraceResult r;
    if (!ray.hits_bounds) return r;
    double t = ray.t_near;
    for (int i = 0; i < max_steps; ++i) {
        const Vec3d p = ray.origin + t * ray.direction;
        const double d = scene.sdf(p);
        if (d < eps) {
            r.hit = true;
            r.point = p;
            return r;
        }
        t += d;
        if (t > ray.t_far) return r;
    }
    r.converged = false;
    return r;
}

/// Renders one view of `scene` with one ray through each pixel center.
/// Returns the number of unconverged pixels.
inline std::size_t render_analytic(const AnalyticScene& scene, const Camera& cam, const Vec3d& background,
                                   const SyntheticConfig& cfg, Image& img) {
    const auto& k = cam.intrinsics;
    img = Image(k.width, k.height);
    std::size_t unconverged = 0;
    for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x) {
            const Ray ray = make_ray(cam, x + 0.5, y + 0.5, Bounds{});
            const TraceResult tr = sphere_trace(scene, ray, cfg.max_steps, cfg.hit_epsilon);
            if (!tr.converged) ++unconverged;
            img.set_pixel(x, y, tr.hit ? scene.shade(tr.point) : background);
        }
    return unconverged;
}

/// Analytic SDF as a batched ScalarField.
struct SceneSdf {
    const AnalyticScene* scene;
    RowX<double> operator()(const Mat<double>& pos) const {
        RowX<double> out(pos.cols());
        for (Eigen::Index i = 0; i < pos.cols(); ++i) out[i] = scene->sdf(pos.col(i));
        return out;
    }
};

/// Posed views of an analytic scene in unit-cube coordinates (identity
/// normalization), white background, images quantized to 8 bits so the PNG
/// round trip is exact. Train views come first, then val views from an
/// independently rotated lattice.
inline SyntheticData generate_synthetic(const AnalyticScene& scene, const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticData out;
    auto& set = out.set;
    set.background = Vec3d::Ones();
    const Vec3d center = Vec3d::Constant(0.5);
    const auto k = Intrinsics::from_fov_x(cfg.fov_x, cfg.width, cfg.height);

    auto add_views = [&](int n, Split split, std::uint64_t stream) {
        const auto dirs = fibonacci_directions(n, mix_seed(cfg.seed, stream));
        for (int i = 0; i < n; ++i) {
            set.cameras.push_back(Camera::look_at(center + cfg.distance * dirs[std::size_t(i)], center, Vec3d::UnitZ(), k));
            set.splits.push_back(split);
            set.names.push_back("r_" + std::to_string(i));
        }
    };
    add_views(cfg.views, Split::train, 0xca3e);
    add_views(cfg.val_views, Split::val, 0x7a1d);

    set.images.resize(set.cameras.size());
    std::vector<std::size_t> unconverged(set.cameras.size(), 0);
    auto work = [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            unconverged[i] = render_analytic(scene, set.cameras[i], set.background, cfg, set.images[i]);
            quantize(set.images[i]);
        }
    };
    const std::size_t n = set.cameras.size();
    const std::size_t threads = std::clamp<std::size_t>(std::size_t(std::max(cfg.threads, 1)), 1, n);
    {
        std::vector<std::jthread> pool;
        const std::size_t per = (n + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, std::min(n, t * per), std::min(n, (t + 1) * per));
    }
    for (auto u : unconverged) out.unconverged_pixels += u;
    const std::size_t total = n * std::size_t(cfg.width) * std::size_t(cfg.height);
    require(out.unconverged_pixels * 1000 <= total, ErrorCode::generation,
            "sphere tracing did not converge on " + std::to_string(out.unconverged_pixels) + " of " +
                std::to_string(total) + " pixels");

    ExtractConfig ex;
    ex.resolution = cfg.gt_resolution;
    ex.threads = cfg.threads;
    out.ground_truth = extract_mesh(SceneSdf{&scene}, ex);
    set.validate();
    return out;
}

} // namespace nsr
