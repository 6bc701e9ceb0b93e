#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "nsr/field/field.hpp"

using namespace nsr;

namespace {

FieldConfig small_config() {
    FieldConfig cfg;
    cfg.grid = {4, 4, 24, 2, 10};  // the two finest levels are hashed
    cfg.sdf_hidden = 16;
    cfg.geo_features = 4;
    cfg.color_hidden = 16;
    cfg.softplus_beta = 4.0;
    return cfg;
}

FieldParams<double> random_params(std::uint64_t seed) {
    FieldParams<double> params(small_config());
    init_random(params, seed);
    Rng rng(seed + 100);
    // O(1) hash features and non-trivial weights everywhere
    auto& v = params.values();
    for (std::size_t i = 0; i < params.layout().tables_end; ++i) v[i] = uniform(rng, -0.5, 0.5);
    for (int c = 0; c < params.config().grid.encoding_dim(); ++c)
        for (int r = 0; r < params.config().sdf_hidden; ++r)
            params.block(params.layout().sdf_w1)(r, c) = 0.3 * normal01(rng);
    return params;
}

// position at least `margin` (in voxel units) away from any voxel face at every level
Vec3d interior_point(const HashGridConfig& grid, Rng& rng, double margin = 1e-3) {
    for (;;) {
        Vec3d p(uniform(rng, 0.02, 0.98), uniform(rng, 0.02, 0.98), uniform(rng, 0.02, 0.98));
        bool ok = true;
        for (int l = 0; l < grid.num_levels && ok; ++l) {
            const double s = grid.resolution(l) - 1;
            for (int a = 0; a < 3; ++a) {
                const double f = p[a] * s - std::floor(p[a] * s);
                if (f < margin || f > 1 - margin) ok = false;
            }
        }
        if (ok) return p;
    }
}

Mat<double> random_directions(Rng& rng, Eigen::Index n) {
    Mat<double> v(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec3d d(normal01(rng), normal01(rng), normal01(rng));
        v.col(i) = d.normalized();
    }
    return v;
}

// Test loss exercising every field output, including the Eikonal-like
// dependence on the position gradient.
struct ToyLoss {
    Mat<double> positions, view;
    RowX<double> a;
    Mat<double> c;
    LevelMask mask{4};

    double value(const FieldParams<double>& params) const {
        FieldTape<double> tape;
        field_forward(params, mask, positions, view, tape);
        double l = 0;
        for (Eigen::Index b = 0; b < positions.cols(); ++b) {
            const double n = tape.sdf.gradient.col(b).norm();
            l += a[b] * tape.sdf.out(0, b) + (n - 1) * (n - 1) + c.col(b).dot(tape.color.rgb.col(b));
        }
        return l;
    }

    VecX<double> gradient(const FieldParams<double>& params) const {
        FieldTape<double> tape;
        field_forward(params, mask, positions, view, tape);
        Mat<double> d_grad(3, positions.cols());
        for (Eigen::Index b = 0; b < positions.cols(); ++b) {
            const Vec3d g = tape.sdf.gradient.col(b);
            d_grad.col(b) = 2 * (g.norm() - 1) * g / g.norm();
        }
        VecX<double> grad = params.zero_gradient();
        field_backward(params, tape, a, d_grad, c, grad);
        return grad;
    }
};

} // namespace

TEST(EvalSdf, GradientMatchesFiniteDifferences) {
    auto params = random_params(1);
    Rng rng(2);
    const double h = 1e-4;
    for (int trial = 0; trial < 50; ++trial) {
        // keep p +- h inside one voxel at every level
        const Vec3d p = interior_point(params.config().grid, rng, 2e-3);
        const auto eval = eval_sdf(params, p, LevelMask{4});
        Vec3d fd;
        for (int a = 0; a < 3; ++a) {
            Vec3d lo = p, hi = p;
            lo[a] -= h;
            hi[a] += h;
            fd[a] = (eval_sdf(params, hi, LevelMask{4}).value - eval_sdf(params, lo, LevelMask{4}).value) / (2 * h);
        }
        const double rel = (fd - eval.gradient).norm() / std::max(eval.gradient.norm(), 1e-8);
        EXPECT_LT(rel, 1e-4) << "trial " << trial;
    }
}

TEST(EvalSdf, EncodingGradientIsBilinearWithinVoxel) {
    // d/dx of a trilinear function does not depend on x
    FieldConfig cfg = small_config();
    cfg.grid = {1, 4, 4, 1, 8};
    FieldParams<double> params(cfg);
    init_random(params, 4);
    Rng rng(5);
    for (auto& x : params.values()) x = normal01(rng);
    SdfTape<double> tape;
    Mat<double> pts(3, 2);
    pts.col(0) = Vec3d(0.40, 0.50, 0.55);
    pts.col(1) = Vec3d(0.60, 0.50, 0.55);  // same voxel [1/3, 2/3)
    encode_batch(params, LevelMask{1}, pts, tape);
    for (int c = 0; c < 8; ++c) {
        EXPECT_NEAR(tape.dweights(c * 3 + 0, 0), tape.dweights(c * 3 + 0, 1), 1e-12);
    }
}

TEST(EvalColor, ConstantNetworkOutputsSigmoidOfBias) {
    auto params = random_params(3);
    const auto& lay = params.layout();
    params.block(lay.col_w3).setZero();
    params.block(lay.col_b3).col(0) = Vec3d(-1.0, 0.0, 2.5);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        Vec3d p(uniform01(rng), uniform01(rng), uniform01(rng));
        auto rgb = eval_color(params, p, Vec3d(0, 0, 1), Vec3d(1, 0, 0), VecX<double>(VecX<double>::Constant(4, uniform01(rng))));
        EXPECT_NEAR(rgb[0], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
        EXPECT_NEAR(rgb[1], 0.5, 1e-15);
        EXPECT_NEAR(rgb[2], 1.0 / (1.0 + std::exp(-2.5)), 1e-15);
    }
}

TEST(EvalColor, OutputBounded) {
    auto params = random_params(5);
    params.block(params.layout().col_w3) *= 50.0;  // push into saturation
    Rng rng(6);
    for (int i = 0; i < 10000; ++i) {
        Vec3d p(uniform(rng, -1, 2), uniform(rng, -1, 2), uniform(rng, -1, 2));
        Vec3d v = Vec3d(normal01(rng), normal01(rng), normal01(rng)).normalized();
        Vec3d n = Vec3d(normal01(rng), normal01(rng), normal01(rng)).normalized();
        VecX<double> geo(4);
        for (int k = 0; k < 4; ++k) geo[k] = 10 * normal01(rng);
        auto rgb = eval_color(params, p, v, n, geo);
        for (int c = 0; c < 3; ++c) {
            EXPECT_GE(rgb[c], 0.0);
            EXPECT_LE(rgb[c], 1.0);
        }
    }
}

TEST(EvalColor, PositionGradientMatchesFiniteDifferences) {
    auto params = random_params(7);
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3d p(uniform01(rng), uniform01(rng), uniform01(rng));
        const Vec3d v = Vec3d(normal01(rng), normal01(rng), normal01(rng)).normalized();
        const Vec3d n = Vec3d(normal01(rng), normal01(rng), normal01(rng)).normalized();
        VecX<double> geo(4);
        for (int k = 0; k < 4; ++k) geo[k] = normal01(rng);
        const Vec3d weights(normal01(rng), normal01(rng), normal01(rng));

        // analytic: run the batched head with an explicit input and read d_input
        ColorTape<double> tape;
        SdfTape<double> sdf;
        sdf.recorded = sdf.with_gradient = true;
        sdf.positions = Mat<double>(p);
        sdf.out.resize(5, 1);
        sdf.out.col(0) << 0.0, geo;
        sdf.gradient = Mat<double>(n);
        color_forward(params, sdf, Mat<double>(v), tape);
        VecX<double> grad = params.zero_gradient();
        const Mat<double> d_in = color_backward(params, tape, Mat<double>(weights), grad);
        const Vec3d analytic = 2.0 * d_in.block<3, 1>(4, 0);

        const double h = 1e-6;
        Vec3d fd;
        for (int a = 0; a < 3; ++a) {
            Vec3d lo = p, hi = p;
            lo[a] -= h;
            hi[a] += h;
            fd[a] = (weights.dot(eval_color(params, hi, v, n, geo)) - weights.dot(eval_color(params, lo, v, n, geo))) /
                    (2 * h);
        }
        EXPECT_LT((fd - analytic).norm() / std::max(analytic.norm(), 1e-8), 1e-4) << "trial " << trial;
    }
}

TEST(BackpropField, ZeroUpstreamLeavesBufferUnchanged) {
    auto params = random_params(9);
    Rng rng(10);
    Mat<double> pts(3, 8);
    for (int i = 0; i < 8; ++i) pts.col(i) = interior_point(params.config().grid, rng);
    const auto view = random_directions(rng, 8);
    FieldTape<double> tape;
    field_forward(params, LevelMask{4}, pts, view, tape);
    VecX<double> grad = VecX<double>::Constant(params.size(), 0.25);
    field_backward(params, tape, RowX<double>(RowX<double>::Zero(8)), Mat<double>(Mat<double>::Zero(3, 8)),
                   Mat<double>(Mat<double>::Zero(3, 8)), grad);
    EXPECT_EQ((grad.array() - 0.25).abs().maxCoeff(), 0.0);
}

TEST(BackpropField, WithoutRecordedForwardIsContractError) {
    auto params = random_params(11);
    FieldTape<double> tape;
    VecX<double> grad = params.zero_gradient();
    try {
        field_backward(params, tape, RowX<double>(RowX<double>::Zero(1)), Mat<double>(Mat<double>::Zero(3, 1)),
                       Mat<double>(Mat<double>::Zero(3, 1)), grad);
        FAIL() << "expected contract error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::contract);
    }
}

TEST(BackpropField, ParameterGradientsMatchFiniteDifferences) {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        auto params = random_params(seed);
        Rng rng(seed * 7);
        ToyLoss loss;
        const int n = 6;
        loss.positions.resize(3, n);
        for (int i = 0; i < n; ++i) loss.positions.col(i) = interior_point(params.config().grid, rng);
        loss.view = random_directions(rng, n);
        loss.a = RowX<double>::Random(n);
        loss.c = Mat<double>::Random(3, n);

        const VecX<double> analytic = loss.gradient(params);

        // 100 parameters: half among touched hash entries, half among MLP weights
        std::vector<std::size_t> touched, mlp;
        for (std::size_t i = 0; i < params.layout().tables_end; ++i)
            if (analytic[i] != 0.0) touched.push_back(i);
        for (std::size_t i = params.layout().tables_end; i < params.layout().s_log; ++i) mlp.push_back(i);
        ASSERT_GE(touched.size(), 50u);
        std::vector<std::size_t> picks;
        for (int k = 0; k < 50; ++k) picks.push_back(touched[uniform_index(rng, touched.size())]);
        for (int k = 0; k < 50; ++k) picks.push_back(mlp[uniform_index(rng, mlp.size())]);

        const double eps = 1e-5;
        int failures = 0;
        for (auto idx : picks) {
            auto plus = params, minus = params;
            plus.values()[idx] += eps;
            minus.values()[idx] -= eps;
            const double fd = (loss.value(plus) - loss.value(minus)) / (2 * eps);
            const double rel = std::abs(fd - analytic[idx]) / std::max({std::abs(fd), std::abs(analytic[idx]), 1e-6});
            if (rel >= 1e-3) {
                ++failures;
                ADD_FAILURE() << "param " << idx << " analytic " << analytic[idx] << " fd " << fd;
            }
        }
        EXPECT_EQ(failures, 0);
    }
}

TEST(BackpropField, EikonalStationaryOnlyForUnitGradient) {
    // Scale the output layer so the local gradient has a chosen norm; the
    // parameter gradient of (|grad f| - 1)^2 must vanish exactly at norm 1.
    FieldConfig cfg = small_config();
    for (double scale : {0.5, 1.0, 2.0}) {
        FieldParams<double> params(cfg);
        const auto& lay = params.layout();
        init_random(params, 3);
        Mat<double> pts(3, 1);
        pts.col(0) = Vec3d(0.3, 0.6, 0.45);
        SdfTape<double> tape;
        sdf_forward(params, LevelMask{4}, pts, tape, true);
        params.block(lay.sdf_w3).row(0) *= scale / tape.gradient.col(0).norm();
        sdf_forward(params, LevelMask{4}, pts, tape, true);
        const Vec3d g = tape.gradient.col(0);
        ASSERT_NEAR(g.norm(), scale, 1e-12);

        Mat<double> d_grad(3, 1);
        d_grad.col(0) = 2 * (g.norm() - 1) * g / g.norm();
        VecX<double> grad = params.zero_gradient();
        sdf_backward(params, tape, RowX<double>(RowX<double>::Zero(1)), Mat<double>(), d_grad, grad);
        if (scale == 1.0)
            EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-12);
        else
            EXPECT_GT(grad.cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Field, MaskedLevelsNeverChangeOutputs) {
    auto params = random_params(31);
    Rng rng(32);
    Mat<double> pts(3, 16);
    for (int i = 0; i < 16; ++i) pts.col(i) = Vec3d(uniform01(rng), uniform01(rng), uniform01(rng));
    const auto view = random_directions(rng, 16);
    FieldTape<double> before, after;
    field_forward(params, LevelMask{2}, pts, view, before);
    auto changed = params;
    changed.table(2).setRandom();
    changed.table(3).setRandom();
    field_forward(changed, LevelMask{2}, pts, view, after);
    EXPECT_EQ((before.sdf.out - after.sdf.out).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((before.sdf.gradient - after.sdf.gradient).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((before.color.rgb - after.color.rgb).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Field, SharpnessPositiveAndFinite) {
    FieldParams<double> params(small_config());
    for (double s_log : {-50.0, -1.0, 0.0, 3.4, 50.0}) {
        params.s_log() = s_log;
        EXPECT_GT(params.sharpness(), 0.0);
        EXPECT_TRUE(std::isfinite(params.sharpness()));
    }
    EXPECT_NEAR(FieldParams<double>(small_config()).sharpness(), 30.0, 1e-12);
}
