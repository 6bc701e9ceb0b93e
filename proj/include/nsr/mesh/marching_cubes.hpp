#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field/field.hpp"
#include "nsr/mesh/mc_tables.hpp"
#include "nsr/mesh/mesh.hpp"
#include "nsr/render/camera.hpp"

namespace nsr {

/// Batched scalar field: 3 x K positions -> 1 x K values.
template <typename F>
concept ScalarField = requires(const F& f, const Mat<double>& pos) {
    { f(pos) } -> std::convertible_to<RowX<double>>;
};

/// SDF head of trained parameters as a ScalarField.
template <typename T> struct SdfOfField {
    const FieldParams<T>* params;
    LevelMask mask;

    explicit SdfOfField(const FieldParams<T>& p) : params(&p), mask{p.config().grid.num_levels} {}

    RowX<double> operator()(const Mat<double>& pos) const {
        SdfTape<T> tape;
        sdf_forward(*params, mask, Mat<T>(pos.cast<T>()), tape, false);
        return tape.sdf().template cast<double>();
    }
};

struct ExtractConfig {
    int resolution = 256;  // grid points per axis
    Bounds bounds;
    int threads = 1;
    int chunk = 16384;  // points per field call
};

/// Marching cubes over the zero level of `field` sampled on a resolution^3
/// grid spanning `bounds`. The grid is processed one z-slab at a time, so
/// memory is O(resolution^2). Vertices on shared edges are emitted once.
/// Triangles wind counter-clockwise seen from the positive side.
template <ScalarField F> TriangleMesh extract_mesh(const F& field, const ExtractConfig& cfg) {
    const int R = cfg.resolution;
    require(R >= 8, ErrorCode::config, "extract_mesh: resolution must be >= 8");
    require((cfg.bounds.hi.array() > cfg.bounds.lo.array()).all(), ErrorCode::config, "extract_mesh: empty bounds");
    const Vec3d lo = cfg.bounds.lo;
    const Vec3d step = (cfg.bounds.hi - cfg.bounds.lo) / double(R - 1);
    auto grid_point = [&](long i, long j, long k) { return Vec3d(lo + step.cwiseProduct(Vec3d(i, j, k))); };

    const std::size_t slice = std::size_t(R) * R;
    auto eval_slice = [&](int k, std::vector<double>& out) {
        out.resize(slice);
        const std::size_t chunks = (slice + cfg.chunk - 1) / cfg.chunk;
        auto work = [&](std::size_t c0, std::size_t c1) {
            for (std::size_t c = c0; c < c1; ++c) {
                const std::size_t b = c * cfg.chunk, e = std::min(slice, b + cfg.chunk);
                Mat<double> pos(3, Eigen::Index(e - b));
                for (std::size_t p = b; p < e; ++p) pos.col(Eigen::Index(p - b)) = grid_point(long(p % R), long(p / R), k);
                const RowX<double> v = field(pos);
                for (std::size_t p = b; p < e; ++p) out[p] = v[Eigen::Index(p - b)];
            }
        };
        const int threads = std::clamp(cfg.threads, 1, int(chunks));
        if (threads == 1) {
            work(0, chunks);
        } else {
            std::vector<std::jthread> pool;
            const std::size_t per = (chunks + threads - 1) / threads;
            for (int t = 0; t < threads; ++t)
                pool.emplace_back(work, std::min(chunks, t * per), std::min(chunks, (t + 1) * per));
        }
        for (std::size_t p = 0; p < slice; ++p) {
            if (!std::isfinite(out[p])) {
                std::ostringstream msg;
                msg << "non-finite field value at grid point (" << p % R << ", " << p / R << ", " << k
                    << "), position " << grid_point(long(p % R), long(p / R), k).transpose();
                throw Error(ErrorCode::extraction, msg.str());
            }
        }
    };

    TriangleMesh mesh;
    // key: lower grid point index * 3 + axis
    std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
    auto vertex_on_edge = [&](const std::array<long, 3>& a, const std::array<long, 3>& b, double fa, double fb) {
        // always interpolate from the lower endpoint so shared edges agree bit-for-bit
        if (std::tie(a[2], a[1], a[0]) > std::tie(b[2], b[1], b[0])) return std::pair{std::array{b, a}, std::pair{fb, fa}};
        return std::pair{std::array{a, b}, std::pair{fa, fb}};
    };

    std::vector<double> below, above;
    eval_slice(0, below);
    for (int k = 0; k + 1 < R; ++k) {
        eval_slice(k + 1, above);
        for (int j = 0; j + 1 < R; ++j) {
            for (int i = 0; i + 1 < R; ++i) {
                double val[8];
                int index = 0;
                for (int c = 0; c < 8; ++c) {
                    const auto& o = mc::kCornerOffsets[c];
                    const auto& s = o[2] ? above : below;
                    val[c] = s[std::size_t(j + o[1]) * R + std::size_t(i + o[0])];
                    if (val[c] < 0.0) index |= 1 << c;
                }
                const auto edges = mc::kEdgeTable[index];
                if (edges == 0) continue;
                std::uint32_t vid[12];
                for (int e = 0; e < 12; ++e) {
                    if (!(edges & (1 << e))) continue;
                    const int ca = mc::kEdgeCorners[e][0], cb = mc::kEdgeCorners[e][1];
                    const auto& oa = mc::kCornerOffsets[ca];
                    const auto& ob = mc::kCornerOffsets[cb];
                    const std::array<long, 3> pa{i + oa[0], j + oa[1], k + oa[2]};
                    const std::array<long, 3> pb{i + ob[0], j + ob[1], k + ob[2]};
                    const auto [ends, vals] = vertex_on_edge(pa, pb, val[ca], val[cb]);
                    const auto& p0 = ends[0];
                    int axis = 0;
                    while (ends[1][axis] == p0[axis]) ++axis;
                    const std::uint64_t key =
                        ((std::uint64_t(p0[2]) * R + std::uint64_t(p0[1])) * R + std::uint64_t(p0[0])) * 3 + axis;
                    auto [it, inserted] = edge_vertex.try_emplace(key, std::uint32_t(mesh.vertices.size()));
                    if (inserted) {
                        const double t = vals.first / (vals.first - vals.second);
                        const Vec3d x0 = grid_point(p0[0], p0[1], p0[2]);
                        const Vec3d x1 = grid_point(ends[1][0], ends[1][1], ends[1][2]);
                        mesh.vertices.push_back(x0 + t * (x1 - x0));
                    }
                    vid[e] = it->second;
                }
                const auto& tri = mc::kTriTable[index];
                for (int t = 0; tri[t] != -1; t += 3) {
                    std::array<std::uint32_t, 3> f{vid[tri[t]], vid[tri[t + 2]], vid[tri[t + 1]]};
                    // a vertex sitting exactly on a grid point can be shared by two edges
                    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
                    mesh.triangles.push_back(f);
                }
            }
        }
        std::swap(below, above);
    }
    return mesh;
}

} // namespace nsr
