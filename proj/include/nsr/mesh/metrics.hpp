#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include "nsr/common.hpp"
#include "nsr/image.hpp"
#include "nsr/mesh/mesh.hpp"

namespace nsr {

/// `count` points distributed uniformly by area over the triangles of `mesh`.
/// The stream depends only on `seed` and the mesh, so two meshes sampled with
/// the same seed see the same sequence of random numbers.
inline std::vector<Vec3d> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
    require(!mesh.empty(), ErrorCode::empty_mesh, "cannot sample an empty mesh");
    std::vector<double> cdf(mesh.triangles.size());
    double total = 0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& f = mesh.triangles[t];
        const auto& v = mesh.vertices;
        total += 0.5 * (v[f[1]] - v[f[0]]).cross(v[f[2]] - v[f[0]]).norm();
        cdf[t] = total;
    }
    require(total > 0, ErrorCode::empty_mesh, "mesh has zero area");
    Rng rng(mix_seed(seed, 0xc4a3));
    std::vector<Vec3d> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = uniform01(rng) * total;
        const std::size_t t = std::min(std::size_t(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()),
                                       cdf.size() - 1);
        double a = uniform01(rng), b = uniform01(rng);
        if (a + b > 1) {
            a = 1 - a;
            b = 1 - b;
        }
        const auto& f = mesh.triangles[t];
        const auto& v = mesh.vertices;
        out.push_back(v[f[0]] + a * (v[f[1]] - v[f[0]]) + b * (v[f[2]] - v[f[0]]));
    }
    return out;
}

/// Mean distance from each point of `from` to its nearest neighbour in `to`.
inline double mean_nearest_distance(const std::vector<Vec3d>& from, const std::vector<Vec3d>& to) {
    namespace bg = boost::geometry;
    namespace bgi = boost::geometry::index;
    using Point = bg::model::point<double, 3, bg::cs::cartesian>;
    std::vector<Point> pts;
    pts.reserve(to.size());
    for (const auto& p : to) pts.emplace_back(p.x(), p.y(), p.z());
    const bgi::rtree<Point, bgi::rstar<16>> tree(pts.begin(), pts.end());
    double sum = 0;
    std::vector<Point> hit;
    for (const auto& p : from) {
        hit.clear();
        const Point q(p.x(), p.y(), p.z());
        tree.query(bgi::nearest(q, 1), std::back_inserter(hit));
        sum += bg::distance(q, hit.front());
    }
    return sum / double(from.size());
}

struct ChamferReport {
    double chamfer = 0;
    double accuracy = 0;      // mean distance a -> b
    double completeness = 0;  // mean distance b -> a
};

/// Symmetric Chamfer distance between area-uniform point samples of the two meshes.
inline ChamferReport chamfer(const TriangleMesh& a, const TriangleMesh& b, std::size_t samples = 100000,
                             std::uint64_t seed = 0) {
    require(!a.empty(), ErrorCode::empty_mesh, "chamfer: first mesh is empty");
    require(!b.empty(), ErrorCode::empty_mesh, "chamfer: second mesh is empty");
    const auto pa = sample_surface(a, samples, seed);
    const auto pb = sample_surface(b, samples, seed);
    ChamferReport r;
    r.accuracy = mean_nearest_distance(pa, pb);
    r.completeness = mean_nearest_distance(pb, pa);
    r.chamfer = 0.5 * (r.accuracy + r.completeness);
    return r;
}

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
    require(a.same_size(b) && a.pixels() > 0, ErrorCode::contract, "image metrics: dimension mismatch");
    double sum = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        sum += d * d;
    }
    return sum / double(a.data.size());
}

/// 10 log10(1 / MSE) for images in [0,1]; identical images give kPsnrCap.
inline double psnr(const Image& a, const Image& b) {
    const double e = mse(a, b);
    if (e <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

/// Rec. 601 luma, the grayscale used by ssim().
inline std::vector<double> luma(const Image& img) {
    std::vector<double> y(img.pixels());
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
    return y;
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5,
/// k1 = 0.01, k2 = 0.03, dynamic range 1) of the luma channel, clamped to [0,1].
inline double ssim(const Image& a, const Image& b) {
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    require(a.same_size(b), ErrorCode::contract, "ssim: dimension mismatch");
    require(a.width >= kWin && a.height >= kWin, ErrorCode::contract, "ssim: image smaller than the 11x11 window");
    std::array<double, kWin> g{};
    double gs = 0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - kWin / 2;
        g[i] = std::exp(-x * x / (2 * kSigma * kSigma));
        gs += g[i];
    }
    for (auto& v : g) v /= gs;

    const int w = a.width, h = a.height;
    const auto ya = luma(a), yb = luma(b);
    // separable filtering of x, y, x^2, y^2, xy: horizontal pass then vertical
    const int ow = w - kWin + 1, oh = h - kWin + 1;
    std::array<std::vector<double>, 5> horiz;
    for (auto& v : horiz) v.assign(std::size_t(ow) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s[5] = {0, 0, 0, 0, 0};
            for (int k = 0; k < kWin; ++k) {
                const double p = ya[std::size_t(y) * w + x + k], q = yb[std::size_t(y) * w + x + k];
                s[0] += g[k] * p;
                s[1] += g[k] * q;
                s[2] += g[k] * p * p;
                s[3] += g[k] * q * q;
                s[4] += g[k] * p * q;
            }
            for (int c = 0; c < 5; ++c) horiz[c][std::size_t(y) * ow + x] = s[c];
        }
    }
    double total = 0;
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s[5] = {0, 0, 0, 0, 0};
            for (int k = 0; k < kWin; ++k)
                for (int c = 0; c < 5; ++c) s[c] += g[k] * horiz[c][std::size_t(y + k) * ow + x];
            const double mu_a = s[0], mu_b = s[1];
            const double var_a = s[2] - mu_a * mu_a, var_b = s[3] - mu_b * mu_b, cov = s[4] - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) /
                     ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
        }
    }
    return std::clamp(total / (double(ow) * oh), 0.0, 1.0);
}

} // namespace nsr
