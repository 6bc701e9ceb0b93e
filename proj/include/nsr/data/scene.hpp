#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nsr/common.hpp"

namespace nsr {

namespace sdf {

inline double sphere(const Vec3d& p, const Vec3d& c, double r) { return (p - c).norm() - r; }

/// Torus around the axis through `c` along +z.
inline double torus(const Vec3d& p, const Vec3d& c, double major, double minor) {
    const Vec3d q = p - c;
    return std::hypot(std::hypot(q.x(), q.y()) - major, q.z()) - minor;
}

/// Axis-aligned box with half extents `h`.
inline double box(const Vec3d& p, const Vec3d& c, const Vec3d& h) {
    const Vec3d d = (p - c).cwiseAbs() - h;
    return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
}

/// Cylinder of radius r around the segment a-b with hemispherical caps.
inline double capsule(const Vec3d& p, const Vec3d& a, const Vec3d& b, double r) {
    const Vec3d ab = b - a;
    const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    return (p - (a + t * ab)).norm() - r;
}

inline double unite(double a, double b) { return std::min(a, b); }
inline double subtract(double a, double b) { return std::max(a, -b); }

} // namespace sdf

/// Ground-truth scene for synthetic data: signed distance (1-Lipschitz),
/// albedo in [0,1]^3, and Lambertian shading under one directional light.
struct AnalyticScene {
    std::string name;
    std::function<double(const Vec3d&)> sdf;
    std::function<Vec3d(const Vec3d&)> albedo;
    Vec3d light_dir = Vec3d(0.4, -0.8, 0.45).normalized();  // towards the light
    double ambient = 0.35;

    Vec3d normal(const Vec3d& p, double h = 1e-5) const {
        Vec3d g;
        for (int a = 0; a < 3; ++a) {
            Vec3d e = Vec3d::Zero();
            e[a] = h;
            g[a] = sdf(p + e) - sdf(p - e);
        }
        return g.normalized();
    }

    Vec3d shade(const Vec3d& p) const {
        const double lambert = std::max(0.0, normal(p).dot(light_dir));
        return (albedo(p) * (ambient + (1.0 - ambient) * lambert)).cwiseMin(1.0).cwiseMax(0.0);
    }
};

namespace scene_detail {

inline Vec3d stripes(const Vec3d& p, const Vec3d& base) {
    const double s = 0.5 + 0.5 * std::sin(18.0 * p.x() + 11.0 * p.y() + 7.0 * p.z());
    return (base * (0.75 + 0.25 * s)).cwiseMin(1.0);
}

} // namespace scene_detail

inline const std::vector<std::string>& scene_names() {
    static const std::vector<std::string> names{"sphere", "torus", "rope", "holed"};
    return names;
}

/// Radius of the thin cylinder in the rope scene, in unit-cube units.
inline constexpr double kRopeRadius = 0.01;

/// Rope axes of the rope scene: one from the block to the mast and two
/// shrouds from the mast top down to the deck.
struct RopeSegment {
    Vec3d a, b;
};

inline const std::vector<RopeSegment>& rope_segments() {
    static const std::vector<RopeSegment> ropes{
        {{0.52, 0.5, 0.58}, {0.8, 0.5, 0.58}},
        {{0.8, 0.5, 0.76}, {0.8, 0.25, 0.2}},
        {{0.8, 0.5, 0.76}, {0.8, 0.75, 0.2}},
    };
    return ropes;
}

/// Everything in the rope scene except the ropes: deck, block and mast.
inline double rope_scene_anchors(const Vec3d& p) {
    const double deck = sdf::box(p, Vec3d(0.5, 0.5, 0.16), Vec3d(0.4, 0.3, 0.04));
    const double block = sdf::box(p, Vec3d(0.38, 0.5, 0.41), Vec3d(0.14, 0.14, 0.21));
    const double mast = sdf::capsule(p, Vec3d(0.8, 0.5, 0.2), Vec3d(0.8, 0.5, 0.8), 0.035);
    return sdf::unite(deck, sdf::unite(block, mast));
}

/// Index of the rope whose axis is within `band` of `p` while `p` keeps
/// `clearance` from the anchors, or -1. Used to find reconstructed rope.
inline int free_rope_at(const Vec3d& p, double band, double clearance) {
    if (rope_scene_anchors(p) < clearance) return -1;
    for (std::size_t i = 0; i < rope_segments().size(); ++i) {
        const auto& r = rope_segments()[i];
        if (sdf::capsule(p, r.a, r.b, 0.0) < band) return int(i);
    }
    return -1;
}

inline double rope_scene_ropes(const Vec3d& p) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& r : rope_segments()) d = sdf::unite(d, sdf::capsule(p, r.a, r.b, kRopeRadius));
    return d;
}

/// Built-in scenes, all inside [0.05, 0.95]^3:
///   sphere  radius 0.3 at the cube center
///   torus   major 0.25, minor 0.08, tilted ring
///   rope    block and mast on a deck with ropes of radius kRopeRadius
///           (see rope_segments); the block overlaps the initial sphere so
///           early training does not have to discover the object from nothing
///   holed   slab with a small through hole
inline AnalyticScene make_scene(const std::string& name) {
    const Vec3d c(0.5, 0.5, 0.5);
    AnalyticScene s;
    s.name = name;
    if (name == "sphere") {
        s.sdf = [c](const Vec3d& p) { return sdf::sphere(p, c, 0.3); };
        s.albedo = [](const Vec3d& p) { return scene_detail::stripes(p, Vec3d(0.85, 0.45, 0.25)); };
    } else if (name == "torus") {
        s.sdf = [c](const Vec3d& p) {
            // rotate 30 degrees about x so no view sees it edge-on only
            const double a = M_PI / 6.0;
            const Vec3d q = p - c;
            const Vec3d r(q.x(), std::cos(a) * q.y() - std::sin(a) * q.z(), std::sin(a) * q.y() + std::cos(a) * q.z());
            return sdf::torus(r, Vec3d::Zero(), 0.25, 0.08);
        };
        s.albedo = [](const Vec3d& p) { return scene_detail::stripes(p, Vec3d(0.3, 0.7, 0.5)); };
    } else if (name == "rope") {
        s.sdf = [](const Vec3d& p) { return sdf::unite(rope_scene_anchors(p), rope_scene_ropes(p)); };
        s.albedo = [](const Vec3d& p) {
            return rope_scene_ropes(p) < rope_scene_anchors(p) ? Vec3d(0.15, 0.15, 0.6)
                                                                : scene_detail::stripes(p, Vec3d(0.8, 0.6, 0.3));
        };
    } else if (name == "holed") {
        s.sdf = [c](const Vec3d& p) {
            const double slab = sdf::box(p, c, Vec3d(0.3, 0.3, 0.08));
            const double hole = sdf::capsule(p, Vec3d(0.55, 0.45, 0.2), Vec3d(0.55, 0.45, 0.8), 0.035);
            return sdf::subtract(slab, hole);
        };
        s.albedo = [](const Vec3d& p) { return scene_detail::stripes(p, Vec3d(0.7, 0.7, 0.75)); };
    } else {
        std::string list;
        for (const auto& n : scene_names()) list += (list.empty() ? "" : ", ") + n;
        throw Error(ErrorCode::config, "unknown scene '" + name + "'; available: " + list);
    }
    return s;
}

} // namespace nsr
