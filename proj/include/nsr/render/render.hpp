#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <span>
#include <thread>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field/field.hpp"
#include "nsr/image.hpp"
#include "nsr/render/camera.hpp"
#include "nsr/render/volume.hpp"

namespace nsr {

struct RenderConfig {
    int samples_per_ray = 128;
    bool jitter = false;
    Vec3d background = Vec3d::Ones();
    Bounds bounds;
    int chunk_rays = 64;  // rays evaluated by one batched field call

    void validate() const {
        require(samples_per_ray >= 2, ErrorCode::config, "render: samples_per_ray must be >= 2");
        require(chunk_rays >= 1, ErrorCode::config, "render: chunk_rays must be >= 1");
        require((background.array() >= 0).all() && (background.array() <= 1).all(), ErrorCode::config,
                "render: background must be in [0,1]");
        require((bounds.hi.array() > bounds.lo.array()).all(), ErrorCode::config, "render: empty bounds");
    }
};

/// Anything that maps sample positions and view directions (3 x K each) to
/// signed distances (1 x K) and colors (3 x K), plus a transparency sharpness.
template <typename F>
concept RadianceField = requires(const F& f, const Mat<double>& pos, const Mat<double>& dirs, RowX<double>& sdf,
                                 Mat<double>& rgb) {
    f.evaluate(pos, dirs, sdf, rgb);
    { f.sharpness() } -> std::convertible_to<double>;
};

/// Adapter presenting trained parameters as a RadianceField.
template <typename T> class NeuralField {
public:
    NeuralField(const FieldParams<T>& params, LevelMask mask) : params_(&params), mask_(mask) {}
    explicit NeuralField(const FieldParams<T>& params)
        : NeuralField(params, LevelMask{params.config().grid.num_levels}) {}

    void evaluate(const Mat<double>& pos, const Mat<double>& dirs, RowX<double>& sdf, Mat<double>& rgb) const {
        FieldTape<T> tape;
        field_forward(*params_, mask_, Mat<T>(pos.cast<T>()), Mat<T>(dirs.cast<T>()), tape);
        sdf = tape.sdf.sdf().template cast<double>();
        rgb = tape.color.rgb.template cast<double>();
    }
    double sharpness() const { return static_cast<double>(params_->sharpness()); }

private:
    const FieldParams<T>* params_;
    LevelMask mask_;
};

/// Seed of the jitter stream for the ray with global index `ray_index`; the
/// stream does not depend on chunking or thread count.
inline std::uint64_t ray_seed(std::uint64_t seed, std::uint64_t ray_index) { return mix_seed(seed, 0x7261, ray_index); }

/// Renders `rays`, whose global indices start at `first_index`.
template <RadianceField F>
std::vector<RenderResult> render_rays(const F& field, std::span<const Ray> rays, const RenderConfig& cfg,
                                      std::uint64_t seed, std::uint64_t first_index = 0) {
    cfg.validate();
    const int n = cfg.samples_per_ray;
    const double s = field.sharpness();
    std::vector<RenderResult> out(rays.size());
    std::vector<RaySamples> samples;
    std::vector<std::size_t> hit;
    for (std::size_t begin = 0; begin < rays.size(); begin += std::size_t(cfg.chunk_rays)) {
        const std::size_t end = std::min(rays.size(), begin + std::size_t(cfg.chunk_rays));
        samples.clear();
        hit.clear();
        for (std::size_t i = begin; i < end; ++i) {
            if (!rays[i].hits_bounds) {
                out[i].color = cfg.background;
                out[i].hits_bounds = false;
                continue;
            }
            hit.push_back(i);
            samples.push_back(sample_ray(rays[i], n, cfg.jitter, ray_seed(seed, first_index + i)));
        }
        if (hit.empty()) continue;
        Mat<double> pos(3, Eigen::Index(hit.size()) * n), dirs(3, Eigen::Index(hit.size()) * n);
        for (std::size_t h = 0; h < hit.size(); ++h) {
            const Ray& r = rays[hit[h]];
            for (int j = 0; j < n; ++j) {
                const Eigen::Index col = Eigen::Index(h) * n + j;
                pos.col(col) = r.origin + samples[h].t[j] * r.direction;
                dirs.col(col) = r.direction;
            }
        }
        RowX<double> sdf;
        Mat<double> rgb;
        field.evaluate(pos, dirs, sdf, rgb);
        std::vector<Vec3d> colors(n);
        for (std::size_t h = 0; h < hit.size(); ++h) {
            const Eigen::Index off = Eigen::Index(h) * n;
            for (int j = 0; j < n; ++j) colors[j] = rgb.col(off + j);
            std::span<const double> f(sdf.data() + off, std::size_t(n));
            out[hit[h]] = composite(samples[h].t, samples[h].edges, f, colors, s, cfg.background).result;
        }
    }
    return out;
}

struct RenderReport {
    std::size_t rays = 0;
    std::size_t missed = 0;       // outside the scene bounds, background only
    std::size_t low_opacity = 0;  // hit the bounds but accumulated no weight
    std::size_t rejected = 0;     // non-finite field output
};

struct RenderedImage {
    Image image;
    std::vector<RenderResult> pixels;  // row-major
    RenderReport report;
};

/// Renders every pixel of `cam`. Rows are split across `threads` workers;
/// the output does not depend on the thread count.
template <RadianceField F>
RenderedImage render_image(const Camera& cam, const F& field, const RenderConfig& cfg, std::uint64_t seed,
                           int threads = 1) {
    cam.validate();
    const int w = cam.intrinsics.width, h = cam.intrinsics.height;
    RenderedImage out;
    out.image = Image(w, h);
    out.pixels.resize(std::size_t(w) * h);

    auto render_rows = [&](int y0, int y1) {
        for (int y = y0; y < y1; ++y) {
            std::vector<PixelIndex> px(w);
            for (int x = 0; x < w; ++x) px[x] = {x, y};
            const auto rays = generate_rays(cam, px, cfg.bounds);
            const std::uint64_t first = std::uint64_t(y) * w;
            auto row = render_rays(field, rays, cfg, seed, first);
            std::copy(row.begin(), row.end(), out.pixels.begin() + std::ptrdiff_t(first));
        }
    };
    threads = std::clamp(threads, 1, std::max(1, h));
    if (threads == 1) {
        render_rows(0, h);
    } else {
        std::vector<std::jthread> pool;
        const int per = (h + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int y0 = t * per, y1 = std::min(h, y0 + per);
            if (y0 < y1) pool.emplace_back(render_rows, y0, y1);
        }
    }

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto& r = out.pixels[std::size_t(y) * w + x];
            out.image.set_pixel(x, y, r.color);
            ++out.report.rays;
            if (!r.hits_bounds) ++out.report.missed;
            else if (r.rejected) ++out.report.rejected;
            else if (r.low_opacity) ++out.report.low_opacity;
        }
    }
    return out;
}

/// Forward pass over a training batch with everything the loss needs to
/// backpropagate: per-ray composite caches and one field tape over all samples.
template <typename T> struct BatchRender {
    std::vector<Ray> rays;
    std::vector<CompositeCache> caches;     // one per ray; empty for missed rays
    std::vector<Eigen::Index> first_col;    // first tape column of each ray, -1 if missed
    int samples_per_ray = 0;
    double sharpness = 0;
    FieldTape<T> tape;

    const RenderResult& result(std::size_t i) const { return caches[i].result; }
    std::size_t size() const { return rays.size(); }
};

template <typename T>
BatchRender<T> render_batch(const FieldParams<T>& params, LevelMask mask, std::span<const Ray> rays,
                            const RenderConfig& cfg, std::uint64_t seed, std::uint64_t first_index = 0) {
    cfg.validate();
    const int n = cfg.samples_per_ray;
    BatchRender<T> b;
    b.rays.assign(rays.begin(), rays.end());
    b.samples_per_ray = n;
    b.sharpness = static_cast<double>(params.sharpness());
    b.caches.resize(rays.size());
    b.first_col.assign(rays.size(), -1);

    std::vector<RaySamples> samples(rays.size());
    Eigen::Index cols = 0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays[i].hits_bounds) continue;
        samples[i] = sample_ray(rays[i], n, cfg.jitter, ray_seed(seed, first_index + i));
        b.first_col[i] = cols;
        cols += n;
    }
    Mat<T> pos(3, cols), dirs(3, cols);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (b.first_col[i] < 0) continue;
        for (int j = 0; j < n; ++j) {
            pos.col(b.first_col[i] + j) = (rays[i].origin + samples[i].t[j] * rays[i].direction).template cast<T>();
            dirs.col(b.first_col[i] + j) = rays[i].direction.template cast<T>();
        }
    }
    field_forward(params, mask, pos, dirs, b.tape);

    std::vector<double> f(n);
    std::vector<Vec3d> colors(n);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (b.first_col[i] < 0) {
            b.caches[i].result.color = cfg.background;
            b.caches[i].background = cfg.background;
            continue;
        }
        for (int j = 0; j < n; ++j) {
            f[j] = static_cast<double>(b.tape.sdf.out(0, b.first_col[i] + j));
            colors[j] = b.tape.color.rgb.col(b.first_col[i] + j).template cast<double>();
        }
        b.caches[i] = composite(samples[i].t, samples[i].edges, f, colors, b.sharpness, cfg.background);
    }
    return b;
}

} // namespace nsr
