#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nsr/common.hpp"

namespace nsr {

struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    /// Square pixels, principal point at the image center.
    static Intrinsics from_fov_x(double camera_angle_x, int width, int height) {
        const double f = 0.5 * width / std::tan(0.5 * camera_angle_x);
        return {f, f, 0.5 * width, 0.5 * height, width, height};
    }

    double fov_x() const { return 2.0 * std::atan(0.5 * width / fx); }
};

/// Pinhole camera. `camera_to_world` uses the computer-vision convention:
/// +x right, +y down, +z forward. The NeRF/OpenGL convention (+y up,
/// looking along -z) is converted at I/O boundaries, see data/transforms.hpp.
struct Camera {
    Intrinsics intrinsics;
    Eigen::Matrix4d camera_to_world = Eigen::Matrix4d::Identity();

    Eigen::Matrix3d rotation() const { return camera_to_world.topLeftCorner<3, 3>(); }
    Vec3d position() const { return camera_to_world.topRightCorner<3, 1>(); }
    Vec3d forward() const { return rotation().col(2); }

    void validate() const {
        const auto& k = intrinsics;
        require(k.width > 0 && k.height > 0, ErrorCode::config, "camera: image size must be positive");
        require(k.fx > 0 && k.fy > 0 && std::isfinite(k.fx) && std::isfinite(k.fy), ErrorCode::config,
                "camera: focal lengths must be positive and finite");
        require(std::isfinite(k.cx) && std::isfinite(k.cy), ErrorCode::config, "camera: principal point not finite");
        const Eigen::Matrix3d r = rotation();
        require((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-6, ErrorCode::config,
                "camera: rotation is not orthonormal");
        require(camera_to_world.allFinite(), ErrorCode::config, "camera: pose not finite");
    }

    /// World-space camera looking from `eye` towards `target`.
    static Camera look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up_hint, Intrinsics k) {
        const Vec3d f = (target - eye).normalized();
        Vec3d up = up_hint;
        if (std::abs(f.dot(up.normalized())) > 0.999) up = std::abs(f.x()) < 0.9 ? Vec3d::UnitX() : Vec3d::UnitY();
        const Vec3d right = f.cross(up).normalized();  // +x
        const Vec3d down = f.cross(right);             // +y
        Camera cam;
        cam.intrinsics = k;
        cam.camera_to_world.topLeftCorner<3, 3>() << right, down, f;
        cam.camera_to_world.topRightCorner<3, 1>() = eye;
        return cam;
    }
};

struct PixelIndex {
    int x = 0, y = 0;
};

/// Axis-aligned box the scene lives in; the field sees [0,1]^3.
struct Bounds {
    Vec3d lo = Vec3d::Zero();
    Vec3d hi = Vec3d::Ones();
};

struct Ray {
    Vec3d origin = Vec3d::Zero();
    Vec3d direction = Vec3d::UnitZ();
    double t_near = 0;
    double t_far = 0;
    bool hits_bounds = false;  // false: rendered with the background color only
};

/// Slab test. Returns the parametric interval of the ray inside the box,
/// clipped to t >= 0; nullopt when the ray misses.
inline std::optional<std::pair<double, double>> intersect_box(const Vec3d& o, const Vec3d& d, const Bounds& box) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-300) {
            if (o[a] < box.lo[a] || o[a] > box.hi[a]) return std::nullopt;
            continue;
        }
        const double inv = 1.0 / d[a];
        double ta = (box.lo[a] - o[a]) * inv;
        double tb = (box.hi[a] - o[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (!(t1 > t0 + 1e-9)) return std::nullopt;
    return std::make_pair(t0, t1);
}

inline Ray make_ray(const Camera& cam, double px, double py, const Bounds& box) {
    const auto& k = cam.intrinsics;
    const Vec3d dir_cam((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
    Ray ray;
    ray.origin = cam.position();
    ray.direction = (cam.rotation() * dir_cam).normalized();
    if (auto hit = intersect_box(ray.origin, ray.direction, box)) {
        ray.t_near = hit->first;
        ray.t_far = hit->second;
        ray.hits_bounds = true;
    }
    return ray;
}

/// One ray per pixel through the pixel center (x + 0.5, y + 0.5).
inline std::vector<Ray> generate_rays(const Camera& cam, std::span<const PixelIndex> pixels,
                                      const Bounds& box = Bounds{}) {
    cam.validate();
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    for (const auto& p : pixels) {
        require(p.x >= 0 && p.y >= 0 && p.x < cam.intrinsics.width && p.y < cam.intrinsics.height,
                ErrorCode::contract, "pixel index outside image bounds");
        rays.push_back(make_ray(cam, p.x + 0.5, p.y + 0.5, box));
    }
    return rays;
}

} // namespace nsr
