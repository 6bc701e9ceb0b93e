#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "nsr/field/field.hpp"
#include "nsr/render/render.hpp"

using namespace nsr;

namespace {

struct SphereField {
    Vec3d center{0.5, 0.5, 0.5};
    double radius = 0.3;
    double s = 1000.0;
    Vec3d albedo{0.8, 0.3, 0.1};

    void evaluate(const Mat<double>& pos, const Mat<double>&, RowX<double>& sdf, Mat<double>& rgb) const {
        sdf = ((pos.colwise() - center).colwise().norm().array() - radius).matrix();
        rgb = albedo.replicate(1, pos.cols());
    }
    double sharpness() const { return s; }
};

Camera test_camera(int w = 32, int h = 24) {
    return Camera::look_at(Vec3d(0.5, 0.5, -1.5), Vec3d(0.5, 0.5, 0.5), Vec3d(0, -1, 0),
                           Intrinsics::from_fov_x(0.6, w, h));
}

// linear sdf f(t) = t0 - t sampled at the stratified midpoints of [0, 1]
CompositeCache linear_ray(double t0, int n, double s, double slope = 1.0) {
    Ray ray;
    ray.t_near = 0;
    ray.t_far = 1;
    ray.hits_bounds = true;
    auto smp = sample_ray(ray, n, false, 0);
    std::vector<double> f(n);
    std::vector<Vec3d> c(n, Vec3d(0.2, 0.4, 0.6));
    for (int j = 0; j < n; ++j) f[j] = slope * (t0 - smp.t[j]);
    return composite(smp.t, smp.edges, f, c, s, Vec3d::Ones());
}

FieldConfig small_config() {
    FieldConfig cfg;
    cfg.grid = {4, 4, 24, 2, 10};
    cfg.sdf_hidden = 16;
    cfg.geo_features = 4;
    cfg.color_hidden = 16;
    cfg.softplus_beta = 4.0;
    return cfg;
}

} // namespace

TEST(Rays, PrincipalPointLooksForward) {
    auto cam = test_camera(32, 24);
    const auto ray = make_ray(cam, cam.intrinsics.cx, cam.intrinsics.cy, Bounds{});
    EXPECT_LT((ray.direction - cam.forward()).norm(), 1e-12);
    EXPECT_NEAR(ray.direction.norm(), 1.0, 1e-12);
}

TEST(Rays, ChordLengthThroughCubeCenter) {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        // unit direction, origin outside the cube on the line through its center
        Vec3d d(normal01(rng), normal01(rng), normal01(rng));
        d.normalize();
        const Vec3d c(0.5, 0.5, 0.5);
        const Vec3d o = c - 3.0 * d;
        const auto hit = intersect_box(o, d, Bounds{});
        ASSERT_TRUE(hit);
        // half chord: distance from center to the first face along d
        const double half = 0.5 / d.cwiseAbs().maxCoeff();
        EXPECT_NEAR(hit->second - hit->first, 2.0 * half, 1e-12);
    }
}

TEST(Rays, MissingRayIsFlagged) {
    const auto ray = make_ray(Camera::look_at(Vec3d(3, 3, 3), Vec3d(6, 6, 6), Vec3d(0, 0, 1),
                                              Intrinsics::from_fov_x(0.5, 8, 8)),
                              4, 4, Bounds{});
    EXPECT_FALSE(ray.hits_bounds);
}

TEST(Rays, OffImagePixelIsAnError) {
    auto cam = test_camera(8, 6);
    std::vector<PixelIndex> px{{8, 0}};
    EXPECT_THROW(generate_rays(cam, px), Error);
    px = {{0, -1}};
    EXPECT_THROW(generate_rays(cam, px), Error);
}

TEST(Rays, DegenerateIntrinsicsAreAConfigError) {
    auto cam = test_camera(8, 6);
    cam.intrinsics.fx = 0;
    std::vector<PixelIndex> px{{0, 0}};
    try {
        generate_rays(cam, px);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::config);
    }
}

TEST(Sampler, TwoBinMidpoints) {
    Ray ray;
    ray.t_near = 0;
    ray.t_far = 1;
    auto s = sample_ray(ray, 2, false, 0);
    ASSERT_EQ(s.t.size(), 2u);
    EXPECT_DOUBLE_EQ(s.t[0], 0.25);
    EXPECT_DOUBLE_EQ(s.t[1], 0.75);
}

TEST(Sampler, JitterIsSeeded) {
    Ray ray;
    ray.t_near = 0.3;
    ray.t_far = 1.7;
    auto a = sample_ray(ray, 16, true, 42);
    auto b = sample_ray(ray, 16, true, 42);
    auto c = sample_ray(ray, 16, true, 43);
    EXPECT_EQ(a.t, b.t);
    EXPECT_NE(a.t, c.t);
}

TEST(Sampler, SamplesSortedInsideInterval) {
    Rng rng(8);
    for (int i = 0; i < 10000; ++i) {
        Ray ray;
        ray.t_near = uniform(rng, 0, 2);
        ray.t_far = ray.t_near + uniform(rng, 1e-3, 2);
        const int n = 2 + int(uniform_index(rng, 30));
        auto s = sample_ray(ray, n, i % 2 == 0, std::uint64_t(i));
        ASSERT_GE(s.t.front(), ray.t_near);
        ASSERT_LE(s.t.back(), ray.t_far);
        for (int j = 1; j < n; ++j) ASSERT_GT(s.t[j], s.t[j - 1]);
    }
}

TEST(Transparency, MidpointSaturationSymmetry) {
    for (double s : {0.1, 1.0, 30.0, 1e4}) EXPECT_EQ(transparency(0.0, s), 0.5);
    EXPECT_LT(1.0 - transparency(10.0, 10.0), 1e-40);
    EXPECT_GT(transparency(-10.0, 10.0), 0.0);
    EXPECT_LT(transparency(-10.0, 10.0), 1e-40);
    EXPECT_TRUE(std::isfinite(transparency(-1e6, 1e6)));
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const double f = uniform(rng, -3, 3), s = uniform(rng, 0.1, 100);
        EXPECT_NEAR(transparency(f, s) + transparency(-f, s), 1.0, 1e-12);
    }
}

TEST(Composite, EmptyRayShowsBackground) {
    std::vector<double> t{0.25, 0.75}, e{0, 0.5, 1}, f{5, 5};
    std::vector<Vec3d> c(2, Vec3d(0, 0, 0));
    auto cache = composite(t, e, f, c, 100.0, Vec3d(1, 0.5, 0.25));
    EXPECT_LT(cache.result.opacity, 1e-12);
    EXPECT_LT((cache.result.color - Vec3d(1, 0.5, 0.25)).norm(), 1e-12);
    EXPECT_FALSE(cache.result.t_s.has_value());
    EXPECT_TRUE(cache.result.low_opacity);
}

TEST(Composite, LinearZeroCrossingIsExact) {
    Rng rng(21);
    for (int i = 0; i < 100; ++i) {
        const double t0 = uniform(rng, 0.05, 0.95);
        const double slope = uniform(rng, 0.2, 5.0);
        auto c = linear_ray(t0, 37, 50.0, slope);
        ASSERT_TRUE(c.result.t_s.has_value());
        EXPECT_NEAR(*c.result.t_s, t0, 1e-12);
    }
}

TEST(Composite, ArgmaxWeightAtNearestSampleToSurface) {
    const int n = 512;
    Rng rng(77);
    for (int draw = 0; draw < 20; ++draw) {
        const double t0 = uniform(rng, 0.1, 0.9);
        auto c = linear_ray(t0, n, 1e3);
        const auto best = std::max_element(c.weights.begin(), c.weights.end()) - c.weights.begin();
        // brute force over the samples
        int nearest = 0;
        for (int j = 1; j < n; ++j)
            if (std::abs(c.t[j] - t0) < std::abs(c.t[nearest] - t0)) nearest = j;
        EXPECT_EQ(best, nearest) << "t0 = " << t0;
    }
}

TEST(Composite, InvariantsOnRandomRays) {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const int n = 2 + int(uniform_index(rng, 40));
        Ray ray;
        ray.t_near = uniform(rng, 0, 1);
        ray.t_far = ray.t_near + uniform(rng, 0.01, 2);
        auto smp = sample_ray(ray, n, true, std::uint64_t(i));
        std::vector<double> f(n);
        std::vector<Vec3d> col(n);
        for (int j = 0; j < n; ++j) {
            f[j] = uniform(rng, -1, 1);
            col[j] = Vec3d(uniform01(rng), uniform01(rng), uniform01(rng));
        }
        auto c = composite(smp.t, smp.edges, f, col, std::exp(uniform(rng, 0, 8)), Vec3d::Zero());
        double sum = 0;
        for (double w : c.weights) {
            EXPECT_GE(w, 0.0);
            sum += w;
        }
        EXPECT_LE(sum, 1.0 + 1e-6);
        for (int k = 0; k < n; ++k) EXPECT_LE(c.clamped[k + 1], c.clamped[k]);
        if (c.result.opacity > 1e-8) {
            EXPECT_GE(c.result.t_r, ray.t_near);
            EXPECT_LE(c.result.t_r, ray.t_far);
        }
        if (c.result.t_s) {
            const int j = c.crossing;
            EXPECT_LE(f[j] * f[j + 1], 0.0);
            EXPECT_GE(*c.result.t_s, c.t[j]);
            EXPECT_LE(*c.result.t_s, c.t[j + 1]);
        }
    }
}

TEST(Composite, NonFiniteSdfRejectsRay) {
    std::vector<double> t{0.25, 0.75}, e{0, 0.5, 1}, f{0.1, std::nan("")};
    std::vector<Vec3d> c(2, Vec3d(0, 0, 0));
    auto cache = composite(t, e, f, c, 10.0, Vec3d::Ones());
    EXPECT_TRUE(cache.result.rejected);
    auto g = composite_backward(cache, Vec3d::Ones(), 1.0, 1.0);
    for (double v : g.d_sdf) EXPECT_EQ(v, 0.0);
}

TEST(Composite, BackwardMatchesFiniteDifferences) {
    Rng rng(31);
    const int n = 12;
    for (int trial = 0; trial < 20; ++trial) {
        Ray ray;
        ray.t_near = 0.2;
        ray.t_far = 1.4;
        auto smp = sample_ray(ray, n, true, std::uint64_t(trial));
        std::vector<double> f(n);
        std::vector<Vec3d> col(n);
        const double t0 = uniform(rng, 0.4, 1.2);
        for (int j = 0; j < n; ++j) {
            f[j] = (t0 - smp.t[j]) + 0.05 * std::sin(7.0 * smp.t[j] + trial);
            col[j] = Vec3d(uniform01(rng), uniform01(rng), uniform01(rng));
        }
        const double s = uniform(rng, 5, 40);
        const Vec3d v(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
        const double a = uniform(rng, -1, 1), b = uniform(rng, -1, 1);
        auto objective = [&](const std::vector<double>& ff, const std::vector<Vec3d>& cc, double ss) {
            auto c = composite(smp.t, smp.edges, ff, cc, ss, Vec3d(0.3, 0.3, 0.3));
            return v.dot(c.result.color) + a * c.result.t_r + b * c.result.t_s.value_or(0.0);
        };
        auto base = composite(smp.t, smp.edges, f, col, s, Vec3d(0.3, 0.3, 0.3));
        auto g = composite_backward(base, v, a, b);
        const double eps = 1e-6;
        for (int j = 0; j < n; ++j) {
            auto fp = f, fm = f;
            fp[j] += eps;
            fm[j] -= eps;
            const double fd = (objective(fp, col, s) - objective(fm, col, s)) / (2 * eps);
            EXPECT_NEAR(g.d_sdf[j], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "sample " << j;
            for (int ch = 0; ch < 3; ++ch) {
                auto cp = col, cm = col;
                cp[j][ch] += eps;
                cm[j][ch] -= eps;
                const double fdc = (objective(f, cp, s) - objective(f, cm, s)) / (2 * eps);
                EXPECT_NEAR(g.d_color[j][ch], fdc, 1e-6);
            }
        }
        const double fds = (objective(f, col, s + eps) - objective(f, col, s - eps)) / (2 * eps);
        EXPECT_NEAR(g.d_s, fds, 1e-5 * std::max(1.0, std::abs(fds)));
    }
}

TEST(RenderImage, SinglePixelMatchesRenderRay) {
    SphereField field;
    RenderConfig cfg;
    cfg.samples_per_ray = 64;
    cfg.jitter = true;
    auto cam = test_camera(1, 1);
    auto img = render_image(cam, field, cfg, 9);
    std::vector<PixelIndex> px{{0, 0}};
    auto rays = generate_rays(cam, px);
    auto direct = render_rays(field, std::span<const Ray>(rays), cfg, 9);
    EXPECT_EQ(img.pixels[0].color, direct[0].color);
    EXPECT_EQ(img.pixels[0].t_r, direct[0].t_r);
    EXPECT_EQ(img.image.at(0, 0, 1), static_cast<float>(direct[0].color[1]));
}

TEST(RenderImage, DeterministicAndThreadIndependent) {
    SphereField field;
    field.s = 50;
    RenderConfig cfg;
    cfg.samples_per_ray = 32;
    cfg.jitter = true;
    auto cam = test_camera(16, 12);
    auto a = render_image(cam, field, cfg, 3, 1);
    auto b = render_image(cam, field, cfg, 3, 1);
    auto c = render_image(cam, field, cfg, 3, 4);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.image, c.image);
    EXPECT_EQ(a.report.rays, 16u * 12u);
}

TEST(RenderImage, SphereSilhouetteMatchesProjection) {
    SphereField field;
    RenderConfig cfg;
    cfg.samples_per_ray = 256;
    cfg.background = Vec3d::Zero();
    const int w = 48, h = 40;
    auto cam = test_camera(w, h);
    auto img = render_image(cam, field, cfg, 1);

    // analytic oracle: pixel-center ray passes within the radius of the center
    auto covered = [&](int x, int y) {
        const auto ray = make_ray(cam, x + 0.5, y + 0.5, Bounds{});
        const Vec3d oc = field.center - ray.origin;
        const double along = oc.dot(ray.direction);
        return along > 0 && (oc - along * ray.direction).norm() < field.radius;
    };
    int mismatches = 0, inside = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool rendered = img.pixels[std::size_t(y) * w + x].opacity > 0.5;
            const bool truth = covered(x, y);
            inside += truth;
            if (rendered == truth) continue;
            ++mismatches;
            bool near_edge = false;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = std::clamp(x + dx, 0, w - 1), yy = std::clamp(y + dy, 0, h - 1);
                    near_edge |= covered(xx, yy) != truth;
                }
            EXPECT_TRUE(near_edge) << "pixel " << x << "," << y;
        }
    }
    EXPECT_GT(inside, 100);
    EXPECT_LT(mismatches, inside / 10);
}

TEST(RenderBatch, ColorGradientMatchesFiniteDifferences) {
    FieldParams<double> params(small_config());
    init_random(params, 12);
    params.values().head(params.layout().tables_end) *= 300.0;
    {
        // hash columns of the first layer start at zero; give them weight so tables matter
        Rng w(99);
        auto w1 = params.block(params.layout().sdf_w1);
        for (int c = 0; c < params.config().grid.encoding_dim(); ++c)
            for (int r = 0; r < w1.rows(); ++r) w1(r, c) = 0.5 * normal01(w);
    }
    auto cam = test_camera(8, 8);
    std::vector<PixelIndex> px{{2, 3}, {4, 4}, {5, 1}, {6, 6}};
    auto rays = generate_rays(cam, px);
    RenderConfig cfg;
    cfg.samples_per_ray = 16;
    cfg.jitter = true;
    const LevelMask mask{4};
    std::vector<Vec3d> v{{1, -0.5, 0.2}, {0.3, 0.7, -1}, {-0.2, 0.1, 0.9}, {0.5, 0.5, 0.5}};

    auto objective = [&](const FieldParams<double>& p) {
        auto b = render_batch(p, mask, std::span<const Ray>(rays), cfg, 5);
        double sum = 0;
        for (std::size_t i = 0; i < rays.size(); ++i) sum += v[i].dot(b.result(i).color);
        return sum;
    };
    auto b = render_batch(params, mask, std::span<const Ray>(rays), cfg, 5);
    const Eigen::Index cols = b.tape.sdf.batch();
    RowX<double> d_sdf = RowX<double>::Zero(cols);
    Mat<double> d_rgb = Mat<double>::Zero(3, cols);
    double d_s = 0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        auto g = composite_backward(b.caches[i], v[i], 0, 0);
        d_s += g.d_s;
        for (int j = 0; j < cfg.samples_per_ray; ++j) {
            d_sdf[b.first_col[i] + j] = g.d_sdf[j];
            d_rgb.col(b.first_col[i] + j) = g.d_color[j];
        }
    }
    auto grad = params.zero_gradient();
    field_backward(params, b.tape, d_sdf, Mat<double>(Mat<double>::Zero(3, cols)), d_rgb, grad);
    grad[params.layout().s_log] += d_s * params.sharpness();

    Rng rng(6);
    const auto& lay = params.layout();
    std::vector<std::size_t> idx{lay.s_log};
    while (idx.size() < 40) {
        const std::size_t i = std::size_t(uniform_index(rng, params.size()));
        if (i < lay.tables_end && grad[Eigen::Index(i)] == 0.0) continue;
        idx.push_back(i);
    }
    for (std::size_t i : idx) {
        auto p = params, q = params;
        const double eps = 1e-5;
        p.values()[Eigen::Index(i)] += eps;
        q.values()[Eigen::Index(i)] -= eps;
        const double fd = (objective(p) - objective(q)) / (2 * eps);
        const double an = grad[Eigen::Index(i)];
        EXPECT_LT(std::abs(an - fd), 1e-3 * std::max(std::abs(fd), 1e-4)) << "param " << i;
    }
}
