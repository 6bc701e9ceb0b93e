#include <gtest/gtest.h>

#include <cmath>

#include "nsr/loss/losses.hpp"

using namespace nsr;

namespace {

FieldConfig toy_config() {
    FieldConfig cfg;
    cfg.grid = {4, 4, 24, 2, 10};
    cfg.sdf_hidden = 16;
    cfg.geo_features = 4;
    cfg.color_hidden = 16;
    cfg.softplus_beta = 4.0;
    return cfg;
}

struct Toy {
    FieldParams<double> params{toy_config()};
    std::vector<Ray> rays;
    std::vector<Vec3d> truth;
    RenderConfig render;
    LevelMask mask{4};
};

// 4 rays x 16 samples through a randomly initialised field with a surface
// inside the cube, so every factor is away from its clamp
Toy make_toy(std::uint64_t seed) {
    Toy t;
    init_random(t.params, seed);
    t.params.values().head(t.params.layout().tables_end) *= 300.0;
    {
        // hash columns of the first layer start at zero; give them weight so tables matter
        Rng w(99);
        auto w1 = t.params.block(t.params.layout().sdf_w1);
        for (int c = 0; c < t.params.config().grid.encoding_dim(); ++c)
            for (int r = 0; r < w1.rows(); ++r) w1(r, c) = 0.5 * normal01(w);
    }
    auto cam = Camera::look_at(Vec3d(0.5, 0.5, -1.2), Vec3d(0.5, 0.5, 0.5), Vec3d(0, -1, 0),
                               Intrinsics::from_fov_x(0.7, 8, 8));
    std::vector<PixelIndex> px{{2, 3}, {4, 4}, {5, 2}, {3, 5}};
    t.rays = generate_rays(cam, px);
    Rng rng(seed);
    for (int i = 0; i < 4; ++i) t.truth.emplace_back(uniform01(rng), uniform01(rng), uniform01(rng));
    t.render.samples_per_ray = 16;
    t.render.jitter = true;
    // shift the sdf until the zero level crosses at least two rays inside the samples
    t.params.block(t.params.layout().sdf_b3)(0, 0) += 0.5;
    for (int k = 0; k < 60; ++k) {
        auto b = render_batch(t.params, t.mask, std::span<const Ray>(t.rays), t.render, 17);
        int crossing = 0;
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto& r = b.result(i);
            crossing += r.t_s && !r.low_opacity && lambda_g(r.t_r, r.t_s, t.rays[i].t_near, t.rays[i].t_far) < 1.0;
        }
        if (crossing >= 2) break;
        t.params.block(t.params.layout().sdf_b3)(0, 0) -= 0.05;
    }
    return t;
}

double loss_at(const Toy& t, const FieldParams<double>& p, const AdaptiveConfig& cfg,
               const std::vector<double>& frozen) {
    auto b = render_batch(p, t.mask, std::span<const Ray>(t.rays), t.render, 17);
    return total_loss<double>(p, b, t.truth, cfg, nullptr, &frozen).total;
}

} // namespace

TEST(RgbLoss, Examples) {
    std::vector<Vec3d> a{{0.1, 0.2, 0.3}}, b{{0.1, 0.2, 0.3}};
    EXPECT_EQ(rgb_loss(a, b), 0.0);
    std::vector<Vec3d> c{{0.3, 0, 0}}, z{{0, 0, 0}};
    EXPECT_NEAR(rgb_loss(c, z), 0.6, 1e-15);
    std::vector<Vec3d> two{{0.3, 0, 0}, {0, 0.4, 0.3}}, zz{{0, 0, 0}, {0, 0, 0}};
    const double second = 0.5 + 0.7;
    EXPECT_NEAR(rgb_loss(two, zz), (0.6 + second) / 2, 1e-15);
    EXPECT_THROW(rgb_loss(two, z), Error);
}

TEST(LambdaR, Examples) {
    AdaptiveConfig cfg;
    EXPECT_DOUBLE_EQ(lambda_r(0.0, cfg), 0.5);
    EXPECT_DOUBLE_EQ(lambda_r(1e-6, cfg), 0.5);
    EXPECT_NEAR(lambda_r(0.5, cfg), 1e-6 / 0.500001, 1e-18);
    EXPECT_NEAR(lambda_r(0.5, cfg), 2.0e-6, 1e-11);
    EXPECT_DOUBLE_EQ(lambda_r(7.0, cfg), lambda_r(0.5, cfg));
}

TEST(LambdaR, BoundedAndMonotone) {
    AdaptiveConfig cfg;
    double prev = 2;
    for (double d = 0; d < 1.0; d += 1e-3) {
        const double l = lambda_r(d, cfg);
        EXPECT_GT(l, 0.0);
        EXPECT_LE(l, 1.0);
        EXPECT_LE(l, prev);
        prev = l;
    }
}

TEST(LambdaG, Examples) {
    EXPECT_EQ(lambda_g(0.7, 0.7, 0.2, 1.2), 1.0);
    EXPECT_EQ(lambda_g(0.2, 1.2, 0.2, 1.2), 0.0);
    EXPECT_NEAR(lambda_g(0.45, 0.7, 0.2, 1.2), 0.75, 1e-15);
    EXPECT_EQ(lambda_g(0.45, std::nullopt, 0.2, 1.2), 1.0);
    EXPECT_EQ(lambda_g(0.45, 0.9, 0.2, 1.2, true), 1.0);
}

TEST(LambdaG, BoundedAndMonotoneInBias) {
    double prev = 2;
    for (double bias = 0; bias < 2.0; bias += 1e-3) {
        const double l = lambda_g(0.5 + bias, 0.5, 0.0, 1.0);
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 1.0);
        EXPECT_LE(l, prev);
        prev = l;
    }
}

TEST(Eikonal, Examples) {
    Mat<double> ones = Mat<double>::Ones(3, 5);
    std::vector<double> one(3, 1.0);
    EXPECT_EQ(eikonal_loss(ones, one, one, 0.1), 0.0);
    Mat<double> two = Mat<double>::Constant(1, 1, 2.0);
    std::vector<double> l1{1.0};
    EXPECT_NEAR(eikonal_loss(two, l1, l1, 0.1), 0.1, 1e-15);
    std::vector<double> lr{0.5}, lg{0.75};
    EXPECT_NEAR(eikonal_loss(two, lr, lg, 0.1), 0.1 * 0.5 * 0.75, 1e-15);
}

TEST(Eikonal, ReductionAndRelaxation) {
    Rng rng(3);
    const int m = 7, n = 11;
    Mat<double> norms(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) norms(i, j) = uniform(rng, 0, 3);
    std::vector<double> one(m, 1.0), lr(m), lg(m);
    double brute = 0, per_ray = 0;
    for (int i = 0; i < m; ++i) {
        lr[i] = uniform(rng, 1e-6, 1);
        lg[i] = uniform01(rng);
        double inner = 0;
        for (int j = 0; j < n; ++j) {
            inner += (norms(i, j) - 1) * (norms(i, j) - 1);
            brute += (norms(i, j) - 1) * (norms(i, j) - 1);
        }
        per_ray += lg[i] * lr[i] * inner;
    }
    brute *= 0.1 / (m * n);
    per_ray *= 0.1 / (m * n);
    EXPECT_NEAR(eikonal_loss(norms, one, one, 0.1), brute, 1e-12);
    EXPECT_NEAR(eikonal_loss(norms, lr, lg, 0.1), per_ray, 1e-12);
    EXPECT_LE(eikonal_loss(norms, lr, lg, 0.1), brute);
}

TEST(TotalLoss, PerfectRenderWithUnitGradientsIsZero) {
    // a field whose sdf is x - 0.5 exactly: unit gradient everywhere
    FieldConfig cfg = toy_config();
    FieldParams<double> p(cfg);
    const auto& lay = p.layout();
    const int pos = cfg.grid.encoding_dim();
    p.block(lay.sdf_w1).setZero();
    p.block(lay.sdf_w2).setZero();
    p.block(lay.sdf_w3).setZero();
    // softplus(a) - softplus(-a) = a, so route 2x-1 through two units
    p.block(lay.sdf_w1)(0, pos) = 1.0;
    p.block(lay.sdf_w1)(1, pos) = -1.0;
    p.block(lay.sdf_w2)(0, 0) = 1.0;
    p.block(lay.sdf_w2)(0, 1) = -1.0;
    p.block(lay.sdf_w2)(1, 0) = -1.0;
    p.block(lay.sdf_w2)(1, 1) = 1.0;
    p.block(lay.sdf_w3)(0, 0) = 0.5;
    p.block(lay.sdf_w3)(0, 1) = -0.5;

    auto cam = Camera::look_at(Vec3d(-1, 0.5, 0.5), Vec3d(0.5, 0.5, 0.5), Vec3d(0, 0, 1),
                               Intrinsics::from_fov_x(0.5, 4, 4));
    std::vector<PixelIndex> px{{1, 1}, {2, 2}};
    auto rays = generate_rays(cam, px);
    RenderConfig rc;
    rc.samples_per_ray = 8;
    auto b = render_batch(p, LevelMask{4}, std::span<const Ray>(rays), rc, 1);
    for (Eigen::Index c = 0; c < b.tape.sdf.batch(); ++c) {
        ASSERT_NEAR(b.tape.sdf.gradient.col(c).norm(), 1.0, 1e-12);
        ASSERT_NEAR(b.tape.sdf.out(0, c), b.tape.sdf.positions(0, c) - 0.5, 1e-12);
    }
    std::vector<Vec3d> truth{b.result(0).color, b.result(1).color};
    auto grad = p.zero_gradient();
    auto loss = total_loss(p, b, truth, AdaptiveConfig{}, &grad);
    EXPECT_TRUE(loss.finite);
    EXPECT_NEAR(loss.total, 0.0, 1e-20);
}

TEST(TotalLoss, ZeroLambdaEGivesRgbLoss) {
    auto t = make_toy(4);
    AdaptiveConfig cfg;
    cfg.lambda_E = 0;
    auto b = render_batch(t.params, t.mask, std::span<const Ray>(t.rays), t.render, 17);
    auto loss = total_loss<double>(t.params, b, t.truth, cfg, nullptr);
    std::vector<Vec3d> rendered;
    for (std::size_t i = 0; i < b.size(); ++i) rendered.push_back(b.result(i).color);
    EXPECT_EQ(loss.l_sdf, 0.0);
    EXPECT_EQ(loss.total, loss.l_rgb);
    EXPECT_NEAR(loss.l_rgb, rgb_loss(rendered, t.truth), 1e-15);
}

TEST(TotalLoss, AblationFlagsReduceToConstantEikonal) {
    auto t = make_toy(5);
    AdaptiveConfig cfg;
    cfg.use_lambda_g = false;
    cfg.use_lambda_r = false;
    auto b = render_batch(t.params, t.mask, std::span<const Ray>(t.rays), t.render, 17);
    auto loss = total_loss<double>(t.params, b, t.truth, cfg, nullptr);
    double igr = 0;
    const auto& g = b.tape.sdf.gradient;
    for (Eigen::Index c = 0; c < g.cols(); ++c) igr += std::pow(g.col(c).norm() - 1.0, 2);
    igr *= cfg.lambda_E / double(t.rays.size() * t.render.samples_per_ray);
    EXPECT_NEAR(loss.l_sdf, igr, 1e-12);
    for (double v : loss.lambda_r) EXPECT_EQ(v, 1.0);
    for (double v : loss.lambda_g) EXPECT_EQ(v, 1.0);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto t = make_toy(seed);
        AdaptiveConfig cfg;
        cfg.lambda_E = 0.5;
        // larger alpha keeps lambda_r away from 0 so the Eikonal part is exercised
        cfg.alpha = 0.05;
        auto b = render_batch(t.params, t.mask, std::span<const Ray>(t.rays), t.render, 17);
        auto grad = t.params.zero_gradient();
        auto base = total_loss(t.params, b, t.truth, cfg, &grad);
        ASSERT_TRUE(base.finite);
        int active_g = 0;
        for (double lg : base.lambda_g) active_g += (lg > 0 && lg < 1);
        EXPECT_GT(active_g, 0) << "no ray exercises lambda_g";

        Rng rng(seed * 7);
        const auto& lay = t.params.layout();
        std::vector<std::size_t> idx{lay.s_log};
        int tables = 0;
        while (idx.size() < 100) {
            const std::size_t i = std::size_t(uniform_index(rng, t.params.size()));
            const bool table = i < lay.tables_end;
            if (table && (grad[Eigen::Index(i)] == 0.0 || tables >= 50)) continue;
            if (!table && idx.size() - tables > 50) continue;
            tables += table;
            idx.push_back(i);
        }
        int bad = 0;
        for (std::size_t i : idx) {
            auto p = t.params, q = t.params;
            const double eps = 1e-5;
            p.values()[Eigen::Index(i)] += eps;
            q.values()[Eigen::Index(i)] -= eps;
            const double fd = (loss_at(t, p, cfg, base.lambda_r) - loss_at(t, q, cfg, base.lambda_r)) / (2 * eps);
            const double an = grad[Eigen::Index(i)];
            const double err = std::abs(an - fd) / std::max(std::abs(fd), 1e-6);
            if (err >= 1e-3) {
                ++bad;
                ADD_FAILURE() << "param " << i << " analytic " << an << " fd " << fd;
            }
        }
        EXPECT_EQ(bad, 0);
    }
}

TEST(TotalLoss, NonFiniteAbortsWithoutTouchingGradient) {
    auto t = make_toy(6);
    t.params.block(t.params.layout().sdf_b3)(0, 0) = std::nan("");
    auto b = render_batch(t.params, t.mask, std::span<const Ray>(t.rays), t.render, 17);
    auto grad = t.params.zero_gradient();
    auto loss = total_loss(t.params, b, t.truth, AdaptiveConfig{}, &grad);
    EXPECT_FALSE(loss.finite);
    EXPECT_FALSE(loss.diagnostic.empty());
    EXPECT_EQ(grad.cwiseAbs().maxCoeff(), 0.0);
}
