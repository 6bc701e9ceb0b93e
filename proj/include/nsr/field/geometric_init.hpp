#pragma once

#include <cmath>
#include <cstdint>

#include "nsr/common.hpp"
#include "nsr/field/field.hpp"
#include "nsr/field/params.hpp"
#include "nsr/optim/adam.hpp"

namespace nsr {

/// Regression of the SDF head onto the sphere |x - c| - r (c the cube
/// center, r = FieldConfig::init_radius) before training.
struct GeometricInitConfig {
    int batch = 2048;
    int max_iterations = 4000;
    int check_every = 100;
    double lr = 5e-3;
    double tolerance = 0.02;  // max |f - sphere| over the check set
    int check_points = 8192;

    void validate() const {
        require(batch >= 1 && max_iterations >= 0 && check_every >= 1 && check_points >= 1, ErrorCode::config,
                "geometric init: counts must be positive");
        require(lr > 0 && tolerance > 0, ErrorCode::config, "geometric init: lr and tolerance must be > 0");
    }
};

struct GeometricInitReport {
    int iterations = 0;
    double max_error = 0;
};

namespace geometric_init_detail {

/// Half the points uniform in the cube, half within 0.1 of the target sphere.
inline Mat<double> sample_points(Rng& rng, int count, double radius) {
    Mat<double> p(3, count);
    for (int i = 0; i < count; ++i) {
        if (i % 2 == 0) {
            p.col(i) = Vec3d(uniform01(rng), uniform01(rng), uniform01(rng));
        } else {
            const Vec3d dir = Vec3d(normal01(rng), normal01(rng), normal01(rng)).normalized();
            p.col(i) = Vec3d::Constant(0.5) + (radius + uniform(rng, -0.1, 0.1)) * dir;
        }
    }
    return p;
}

inline RowX<double> sphere_sdf(const Mat<double>& p, double radius) {
    return ((p.colwise() - Vec3d::Constant(0.5)).colwise().norm().array() - radius).matrix();
}

} // namespace geometric_init_detail

/// Max |f - sphere| over a fixed check set drawn from `seed`. Points within
/// kInitCoreRadius of the center are excluded: the target has a cone tip
/// there that a smooth network only approximates.
inline constexpr double kInitCoreRadius = 0.1;

template <typename T> double sphere_fit_error(const FieldParams<T>& params, std::uint64_t seed, int points = 8192) {
    Rng rng(mix_seed(seed, 0x9e0c));
    const double r = params.config().init_radius;
    Mat<double> p = geometric_init_detail::sample_points(rng, points, r);
    for (Eigen::Index i = 0; i < p.cols(); ++i)
        while ((p.col(i) - Vec3d::Constant(0.5)).norm() < kInitCoreRadius)
            p.col(i) = Vec3d(uniform01(rng), uniform01(rng), uniform01(rng));
    SdfTape<T> tape;
    sdf_forward(params, LevelMask{params.config().grid.num_levels}, Mat<T>(p.cast<T>()), tape, false);
    return (tape.sdf().template cast<double>() - geometric_init_detail::sphere_sdf(p, r)).cwiseAbs().maxCoeff();
}

/// Fits the SDF MLP (hash tables and hash-feature weights excluded) to the
/// sphere by mean-squared regression with Adam. Throws a config error if the
/// tolerance is not reached.
template <typename T>
GeometricInitReport geometric_init(FieldParams<T>& params, std::uint64_t seed, const GeometricInitConfig& cfg = {}) {
    cfg.validate();
    const auto& lay = params.layout();
    const auto& fc = params.config();
    const double r = fc.init_radius;

    // Only the SDF MLP moves. The hash-feature columns of its first layer are
    // zero after init_random, so the tables contribute nothing and the fit can
    // run with every level masked off.
    const Eigen::Index begin = Eigen::Index(lay.sdf_w1.offset);
    const Eigen::Index count = Eigen::Index(lay.sdf_b3.offset + lay.sdf_b3.size()) - begin;
    const int enc = fc.grid.encoding_dim();
    for (int c = 0; c < enc; ++c)
        require(params.block(lay.sdf_w1).col(c).isZero(0), ErrorCode::contract,
                "geometric_init expects zero hash-feature weights (run init_random first)");
    const LevelMask none{0};

    Rng rng(mix_seed(seed, 0x6e01));
    AdamState<T> adam{std::size_t(count)};
    VecX<T> grad = params.zero_gradient();
    GeometricInitReport rep;
    rep.max_error = sphere_fit_error(params, seed, cfg.check_points);
    SdfTape<T> tape;
    const Mat<T> no_geo = Mat<T>::Zero(fc.geo_features, cfg.batch);
    for (int it = 0; it < cfg.max_iterations && rep.max_error >= 0.5 * cfg.tolerance; ++it) {
        const Mat<double> p = geometric_init_detail::sample_points(rng, cfg.batch, r);
        sdf_forward(params, none, Mat<T>(p.cast<T>()), tape, false);
        const RowX<double> diff = tape.sdf().template cast<double>() - geometric_init_detail::sphere_sdf(p, r);
        grad.segment(begin, count).setZero();
        sdf_backward(params, tape, RowX<T>((2.0 / cfg.batch * diff).cast<T>()), no_geo, Mat<T>(), grad);
        for (int c = 0; c < enc; ++c) Eigen::Map<Mat<T>>(grad.data() + begin, lay.sdf_w1.rows, lay.sdf_w1.cols).col(c).setZero();
        // decay the step size tenfold over the run
        const double lr = cfg.lr * std::pow(0.1, double(it) / std::max(1, cfg.max_iterations));
        adam_step(params.values().segment(begin, count), grad.segment(begin, count), adam, lr);
        rep.iterations = it + 1;
        if (rep.iterations % cfg.check_every == 0) rep.max_error = sphere_fit_error(params, seed, cfg.check_points);
    }
    rep.max_error = sphere_fit_error(params, seed, cfg.check_points);
    require(rep.max_error < cfg.tolerance, ErrorCode::config,
            "geometric init did not reach the sphere tolerance (max error " + std::to_string(rep.max_error) + ")");
    return rep;
}

/// init_random followed by geometric_init.
template <typename T>
FieldParams<T> initialize_field(const FieldConfig& cfg, std::uint64_t seed, const GeometricInitConfig& init = {}) {
    FieldParams<T> params(cfg);
    init_random(params, seed);
    geometric_init(params, seed, init);
    return params;
}

} // namespace nsr
