#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field/field.hpp"
#include "nsr/render/render.hpp"

namespace nsr {

struct AdaptiveConfig {
    double alpha = 1e-6;
    double c_min = 1e-6;  // bounds on the radiance distance d_r
    double c_max = 0.5;
    double lambda_E = 0.1;
    bool use_lambda_r = true;  // false: lambda_r forced to 1
    bool use_lambda_g = true;  // false: lambda_g forced to 1
    // lambda_r never receives gradients; lambda_g is always clamped to [0,1]
    static constexpr bool detach_lambda_r = true;
    static constexpr bool clamp_lambda_g = true;

    void validate() const {
        require(alpha > 0.0, ErrorCode::config, "adaptive: alpha must be > 0");
        require(c_min > 0.0 && c_min < c_max, ErrorCode::config, "adaptive: need 0 < c_min < c_max");
        require(lambda_E >= 0.0, ErrorCode::config, "adaptive: lambda_E must be >= 0");
    }
};

/// Mean over rays of the Euclidean plus the L1 norm of the color error.
inline double rgb_loss(std::span<const Vec3d> rendered, std::span<const Vec3d> truth) {
    require(rendered.size() == truth.size() && !rendered.empty(), ErrorCode::contract,
            "rgb_loss: batches must be non-empty and of equal size");
    double sum = 0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const Vec3d d = rendered[i] - truth[i];
        sum += d.norm() + d.cwiseAbs().sum();
    }
    return sum / double(rendered.size());
}

/// d rgb_loss_i / d rendered_i for a single ray (before the 1/m factor).
inline Vec3d rgb_loss_grad(const Vec3d& diff) {
    const double norm = diff.norm();
    Vec3d g = diff.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    if (norm > 0) g += diff / norm;
    return g;
}

inline double lambda_r(double d_r, const AdaptiveConfig& cfg) {
    const double d = std::clamp(d_r, cfg.c_min, cfg.c_max);
    return cfg.alpha / (d + cfg.alpha);
}

/// Geometric-bias factor 1 - |t_r - t_s| / (t_far - t_near), clamped to [0,1];
/// 1 when there is no zero crossing or the ray saw no surface.
inline double lambda_g(double t_r, std::optional<double> t_s, double t_near, double t_far, bool low_opacity = false) {
    require(t_far > t_near, ErrorCode::contract, "lambda_g: t_far must exceed t_near");
    if (!t_s || low_opacity) return 1.0;
    return std::clamp(1.0 - std::abs(t_r - *t_s) / (t_far - t_near), 0.0, 1.0);
}

/// (lambda_E / (m n)) sum_i lambda_g_i lambda_r_i sum_j (|n_ij| - 1)^2 for
/// gradient norms given as an m x n matrix.
inline double eikonal_loss(const Mat<double>& grad_norms, std::span<const double> lam_r, std::span<const double> lam_g,
                           double lambda_E) {
    const Eigen::Index m = grad_norms.rows(), n = grad_norms.cols();
    require(m >= 1 && n >= 1 && std::size_t(m) == lam_r.size() && std::size_t(m) == lam_g.size(), ErrorCode::contract,
            "eikonal_loss: shape mismatch");
    double sum = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double inner = (grad_norms.row(i).array() - 1.0).square().sum();
        sum += lam_g[std::size_t(i)] * lam_r[std::size_t(i)] * inner;
    }
    return lambda_E * sum / double(m * n);
}

struct LossBreakdown {
    double l_rgb = 0;
    double l_sdf = 0;
    double total = 0;
    std::vector<double> d_r, lambda_r, lambda_g;
    bool finite = true;
    std::string diagnostic;  // set when the step has to be aborted

    double mean_lambda_r() const { return mean(lambda_r); }
    double mean_lambda_g() const { return mean(lambda_g); }

private:
    static double mean(const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / double(v.size());
    }
};

/// L_total = L_rgb + L_sdf over a rendered batch, with the gradient of
/// L_total accumulated into `grad` (same layout as the parameters).
/// `frozen_lambda_r`, when given, replaces the computed lambda_r values; it
/// lets a finite-difference check hold the detached factor constant.
/// On any non-finite value the breakdown is flagged and `grad` is left as is.
template <typename T>
LossBreakdown total_loss(const FieldParams<T>& params, const BatchRender<T>& batch, std::span<const Vec3d> truth,
                         const AdaptiveConfig& cfg, VecX<T>* grad,
                         const std::vector<double>* frozen_lambda_r = nullptr) {
    cfg.validate();
    const std::size_t m = batch.size();
    require(m >= 1 && truth.size() == m, ErrorCode::contract, "total_loss: truth size must match the batch");
    require(!frozen_lambda_r || frozen_lambda_r->size() == m, ErrorCode::contract,
            "total_loss: frozen lambda_r size mismatch");
    const int n = batch.samples_per_ray;
    const double s = batch.sharpness;
    const auto& gradients = batch.tape.sdf.gradient;

    LossBreakdown out;
    out.d_r.resize(m);
    out.lambda_r.resize(m);
    out.lambda_g.resize(m);
    std::vector<double> eik(m, 0.0);

    auto fail = [&](std::string msg) {
        out.finite = false;
        out.diagnostic = std::move(msg);
        return out;
    };

    for (std::size_t i = 0; i < m; ++i) {
        const auto& r = batch.result(i);
        if (r.rejected) return fail("non-finite field output on ray " + std::to_string(i));
        const Vec3d diff = r.color - truth[i];
        out.l_rgb += diff.norm() + diff.cwiseAbs().sum();
        out.d_r[i] = diff.norm();
        out.lambda_r[i] = frozen_lambda_r ? (*frozen_lambda_r)[i]
                          : cfg.use_lambda_r ? lambda_r(out.d_r[i], cfg)
                                             : 1.0;
        const Ray& ray = batch.rays[i];
        out.lambda_g[i] = (cfg.use_lambda_g && ray.hits_bounds)
                              ? lambda_g(r.t_r, r.t_s, ray.t_near, ray.t_far, r.low_opacity)
                              : 1.0;
        if (batch.first_col[i] >= 0) {
            const Eigen::Index c0 = batch.first_col[i];
            for (int j = 0; j < n; ++j) {
                const double norm = static_cast<double>(gradients.col(c0 + j).norm());
                eik[i] += (norm - 1.0) * (norm - 1.0);
            }
        }
    }
    const double inv_m = 1.0 / double(m);
    const double eik_scale = cfg.lambda_E / (double(m) * double(n));
    out.l_rgb *= inv_m;
    for (std::size_t i = 0; i < m; ++i) out.l_sdf += out.lambda_g[i] * out.lambda_r[i] * eik[i];
    out.l_sdf *= eik_scale;
    out.total = out.l_rgb + out.l_sdf;
    if (!std::isfinite(out.total)) return fail("non-finite loss");
    if (!grad) return out;

    const Eigen::Index cols = batch.tape.sdf.batch();
    RowX<T> d_sdf = RowX<T>::Zero(cols);
    Mat<T> d_grad = Mat<T>::Zero(3, cols);
    Mat<T> d_rgb = Mat<T>::Zero(3, cols);
    double d_s = 0;

    for (std::size_t i = 0; i < m; ++i) {
        if (batch.first_col[i] < 0) continue;
        const auto& cache = batch.caches[i];
        const auto& r = cache.result;
        const Ray& ray = batch.rays[i];
        const Eigen::Index c0 = batch.first_col[i];

        const Vec3d d_color = inv_m * rgb_loss_grad(r.color - truth[i]);
        double d_t_r = 0, d_t_s = 0;
        const double lg = out.lambda_g[i];
        if (cfg.use_lambda_g && r.t_s && !r.low_opacity && lg > 0.0 && lg < 1.0) {
            const double d_lg = eik_scale * out.lambda_r[i] * eik[i];
            const double sign = r.t_r > *r.t_s ? 1.0 : -1.0;
            const double inv_len = 1.0 / (ray.t_far - ray.t_near);
            d_t_r = -d_lg * sign * inv_len;
            d_t_s = d_lg * sign * inv_len;
        }
        const auto cg = composite_backward(cache, d_color, d_t_r, d_t_s);
        d_s += cg.d_s;
        const double w = eik_scale * lg * out.lambda_r[i];
        for (int j = 0; j < n; ++j) {
            d_sdf[c0 + j] = static_cast<T>(cg.d_sdf[j]);
            d_rgb.col(c0 + j) = cg.d_color[j].template cast<T>();
            if (w != 0.0) {
                const Vec3d g = gradients.col(c0 + j).template cast<double>();
                const double norm = g.norm();
                if (norm > 0) d_grad.col(c0 + j) = (w * 2.0 * (norm - 1.0) / norm * g).template cast<T>();
            }
        }
    }
    if (!std::isfinite(d_s) || !d_sdf.allFinite() || !d_grad.allFinite() || !d_rgb.allFinite())
        return fail("non-finite upstream gradient");

    VecX<T> local = VecX<T>::Zero(grad->size());
    if (cols > 0) field_backward(params, batch.tape, d_sdf, d_grad, d_rgb, local);
    local[params.layout().s_log] += static_cast<T>(d_s * s);  // ds/ds_log = s
    if (!local.allFinite()) return fail("non-finite parameter gradient");
    *grad += local;
    return out;
}

} // namespace nsr
