#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/render/camera.hpp"

namespace nsr {

/// Transparency of a point with signed distance `sdf` under sharpness `s`:
/// sigmoid(s * sdf). ~1 outside the surface, ~0 inside, 1/2 on it.
inline double transparency(double sdf, double s) { return sigmoid(s * sdf); }

/// Stratified sample distances plus the bin boundaries they were drawn from.
struct RaySamples {
    std::vector<double> t;      // n, strictly increasing
    std::vector<double> edges;  // n + 1, edges[0] = t_near, edges[n] = t_far
};

/// Splits [t_near, t_far] into n equal bins and draws one distance per bin:
/// the bin midpoint, or a uniform position inside the bin when `jitter` is set.
inline RaySamples sample_ray(const Ray& ray, int n, bool jitter, Rng& rng) {
    require(n >= 2, ErrorCode::contract, "sample_ray: need at least 2 samples");
    require(ray.t_far > ray.t_near, ErrorCode::contract, "sample_ray: empty interval");
    RaySamples out;
    out.t.resize(n);
    out.edges.resize(n + 1);
    const double step = (ray.t_far - ray.t_near) / n;
    for (int j = 0; j <= n; ++j) out.edges[j] = ray.t_near + j * step;
    out.edges[n] = ray.t_far;
    for (int j = 0; j < n; ++j) {
        // keep jittered samples strictly inside the bin so t stays strictly increasing
        const double u = jitter ? 0.001 + 0.998 * uniform01(rng) : 0.5;
        out.t[j] = out.edges[j] + u * (out.edges[j + 1] - out.edges[j]);
    }
    return out;
}

inline RaySamples sample_ray(const Ray& ray, int n, bool jitter, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x5a));
    return sample_ray(ray, n, jitter, rng);
}

struct RenderResult {
    Vec3d color = Vec3d::Zero();
    double opacity = 0;
    double t_r = 0;  // weighted mean sample distance ("rendering point")
    std::optional<double> t_s;  // first zero crossing of the sdf along the samples
    bool hits_bounds = false;
    bool low_opacity = true;
    bool rejected = false;  // non-finite field output
};

/// Intermediate values of one composite() call, kept for its backward pass.
struct CompositeCache {
    int n = 0;
    double s = 0;
    std::vector<int> edge_pair;       // edge k is interpolated from samples (p, p+1)
    std::vector<double> edge_u;       //   with weight u on p+1 and 1-u on p
    std::vector<double> edge_sdf;     // n+1
    std::vector<double> trans;        // raw transparency at edges, n+1
    std::vector<double> clamped;      // running minimum, n+1
    std::vector<int> clamp_source;    // edge index attaining the running minimum
    std::vector<double> weights;      // n
    std::vector<double> t;
    std::vector<double> sdf;
    std::vector<Vec3d> colors;
    Vec3d background = Vec3d::Ones();
    int crossing = -1;                // sample index j with sdf_j * sdf_{j+1} <= 0
    RenderResult result;
};

/// Threshold below which a ray is treated as seeing no surface.
inline constexpr double kLowOpacity = 1e-8;

/// Discrete volume rendering of one ray.
///
/// The sdf is known at the sample distances; transparency is evaluated on the
/// bin boundaries using the sdf linearly interpolated between neighbouring
/// samples (and extrapolated at the two ends), so that the weight of bin j,
///   w_j = max(T~_j - T~_{j+1}, 0),  T~_k = min(T_0..T_k),
/// is centred on sample j. For a linear sdf this is exact and the largest
/// weight falls on the sample nearest the zero crossing.
inline CompositeCache composite(std::span<const double> t, std::span<const double> edges, std::span<const double> sdf,
                                std::span<const Vec3d> colors, double s, const Vec3d& background) {
    const int n = static_cast<int>(t.size());
    require(n >= 2 && edges.size() == t.size() + 1 && sdf.size() == t.size() && colors.size() == t.size(),
            ErrorCode::contract, "composite: inconsistent sample arrays");
    CompositeCache c;
    c.n = n;
    c.s = s;
    c.t.assign(t.begin(), t.end());
    c.sdf.assign(sdf.begin(), sdf.end());
    c.colors.assign(colors.begin(), colors.end());
    c.background = background;
    auto& r = c.result;
    r.hits_bounds = true;

    for (int j = 0; j < n; ++j) {
        if (!std::isfinite(sdf[j]) || !colors[j].allFinite()) {
            r.rejected = true;
            r.color = background;
            return c;
        }
    }

    c.edge_pair.resize(n + 1);
    c.edge_u.resize(n + 1);
    c.edge_sdf.resize(n + 1);
    c.trans.resize(n + 1);
    c.clamped.resize(n + 1);
    c.clamp_source.resize(n + 1);
    for (int k = 0; k <= n; ++k) {
        const int p = std::clamp(k - 1, 0, n - 2);
        const double u = (edges[k] - t[p]) / (t[p + 1] - t[p]);
        c.edge_pair[k] = p;
        c.edge_u[k] = u;
        c.edge_sdf[k] = (1.0 - u) * sdf[p] + u * sdf[p + 1];
        c.trans[k] = transparency(c.edge_sdf[k], s);
        if (k == 0 || c.trans[k] < c.clamped[k - 1]) {
            c.clamped[k] = c.trans[k];
            c.clamp_source[k] = k;
        } else {
            c.clamped[k] = c.clamped[k - 1];
            c.clamp_source[k] = c.clamp_source[k - 1];
        }
    }

    c.weights.resize(n);
    double opacity = 0, weighted_t = 0;
    Vec3d color = Vec3d::Zero();
    for (int j = 0; j < n; ++j) {
        const double w = std::max(c.clamped[j] - c.clamped[j + 1], 0.0);
        c.weights[j] = w;
        opacity += w;
        weighted_t += w * t[j];
        color += w * colors[j];
    }
    r.opacity = opacity;
    r.color = color + (1.0 - opacity) * background;
    r.low_opacity = opacity <= kLowOpacity;
    r.t_r = r.low_opacity ? 0.5 * (edges[0] + edges[n]) : weighted_t / opacity;

    for (int j = 0; j + 1 < n; ++j) {
        if (sdf[j] * sdf[j + 1] <= 0.0) {
            c.crossing = j;
            const double denom = sdf[j] - sdf[j + 1];
            r.t_s = denom == 0.0 ? t[j] : t[j] + (t[j + 1] - t[j]) * sdf[j] / denom;
            break;
        }
    }
    return c;
}

struct CompositeGrad {
    std::vector<double> d_sdf;
    std::vector<Vec3d> d_color;
    double d_s = 0;
};

/// Reverse pass of composite() for upstream gradients on the ray color,
/// t_r and t_s. Min/max branches follow the forward choice.
inline CompositeGrad composite_backward(const CompositeCache& c, const Vec3d& d_color, double d_t_r, double d_t_s) {
    const int n = c.n;
    CompositeGrad g;
    g.d_sdf.assign(n, 0.0);
    g.d_color.assign(n, Vec3d::Zero());
    if (c.result.rejected) return g;
    const auto& r = c.result;

    std::vector<double> d_w(n, 0.0);
    const double bg_dot = d_color.dot(c.background);
    for (int j = 0; j < n; ++j) {
        g.d_color[j] = c.weights[j] * d_color;
        d_w[j] = d_color.dot(c.colors[j]) - bg_dot;
        if (!r.low_opacity) d_w[j] += d_t_r * (c.t[j] - r.t_r) / r.opacity;
    }

    std::vector<double> d_clamped(n + 1, 0.0);
    for (int j = 0; j < n; ++j) {
        if (c.clamped[j] - c.clamped[j + 1] > 0.0) {
            d_clamped[j] += d_w[j];
            d_clamped[j + 1] -= d_w[j];
        }
    }
    std::vector<double> d_trans(n + 1, 0.0);
    for (int k = 0; k <= n; ++k) d_trans[c.clamp_source[k]] += d_clamped[k];

    for (int k = 0; k <= n; ++k) {
        if (d_trans[k] == 0.0) continue;
        const double tr = c.trans[k];
        const double dsig = tr * (1.0 - tr);
        const double d_edge = d_trans[k] * dsig * c.s;
        g.d_s += d_trans[k] * dsig * c.edge_sdf[k];
        const int p = c.edge_pair[k];
        g.d_sdf[p] += (1.0 - c.edge_u[k]) * d_edge;
        g.d_sdf[p + 1] += c.edge_u[k] * d_edge;
    }

    if (c.crossing >= 0 && d_t_s != 0.0) {
        const int j = c.crossing;
        const double f0 = c.sdf[j], f1 = c.sdf[j + 1];
        const double denom = f0 - f1;
        if (denom != 0.0) {
            const double dt = c.t[j + 1] - c.t[j];
            g.d_sdf[j] += d_t_s * (-dt * f1 / (denom * denom));
            g.d_sdf[j + 1] += d_t_s * (dt * f0 / (denom * denom));
        }
    }
    return g;
}

} // namespace nsr
