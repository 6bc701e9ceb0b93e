#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nsr/common.hpp"

namespace nsr {

/// Multi-resolution grid layout. `base_resolution` and `max_resolution` count
/// grid vertices per axis, so a level of resolution N has N-1 cells per axis.
struct HashGridConfig {
    int num_levels = 8;
    int base_resolution = 16;
    int max_resolution = 256;
    int features_per_level = 2;
    int table_size_log2 = 19;

    /// 16 levels, 32^3 up to 2048^3.
    static HashGridConfig full_scale() { return {16, 32, 2048, 2, 19}; }

    void validate() const {
        require(num_levels >= 1, ErrorCode::config, "hash grid: num_levels must be >= 1");
        require(base_resolution >= 2, ErrorCode::config, "hash grid: base_resolution must be >= 2");
        require(max_resolution >= base_resolution, ErrorCode::config,
                "hash grid: max_resolution must be >= base_resolution");
        require(features_per_level >= 1, ErrorCode::config, "hash grid: features_per_level must be >= 1");
        require(table_size_log2 >= 4 && table_size_log2 <= 30, ErrorCode::config,
                "hash grid: table_size_log2 must be in [4, 30]");
    }

    int resolution(int level) const {
        if (num_levels == 1) return base_resolution;
        const double growth = std::log(double(max_resolution) / double(base_resolution)) / double(num_levels - 1);
        return static_cast<int>(std::lround(double(base_resolution) * std::exp(growth * level)));
    }

    std::size_t table_size() const { return std::size_t(1) << table_size_log2; }

    bool dense(int level) const {
        const auto n = static_cast<std::size_t>(resolution(level));
        return n * n * n <= table_size();
    }

    std::size_t level_entries(int level) const {
        const auto n = static_cast<std::size_t>(resolution(level));
        return dense(level) ? n * n * n : table_size();
    }

    int encoding_dim() const { return num_levels * features_per_level; }

    std::size_t total_entries() const {
        std::size_t sum = 0;
        for (int l = 0; l < num_levels; ++l) sum += level_entries(l);
        return sum;
    }

    friend bool operator==(const HashGridConfig&, const HashGridConfig&) = default;
};

/// Number of levels passed through the encoder; the rest output zeros.
struct LevelMask {
    int active_levels = 0;
    bool active(int level) const { return level < active_levels; }
};

/// The eight voxel corners surrounding a point at one level, with trilinear
/// weights and their position derivatives.
template <typename T> struct VoxelCorners {
    std::array<std::uint32_t, 8> entry{};
    std::array<T, 8> weight{};
    std::array<Vec3<T>, 8> dweight{};
};

namespace hash_detail {

inline std::uint32_t spatial_hash(std::uint32_t i, std::uint32_t j, std::uint32_t k, std::uint32_t mask) {
    return (i * 1u ^ j * 2654435761u ^ k * 805459861u) & mask;
}

} // namespace hash_detail

/// Per-level constants of the grid, hoisted out of per-point loops.
struct LevelGeometry {
    int res = 2;
    bool dense = true;
    std::uint32_t mask = 0;

    LevelGeometry() = default;
    LevelGeometry(const HashGridConfig& cfg, int level)
        : res(cfg.resolution(level)), dense(cfg.dense(level)), mask(static_cast<std::uint32_t>(cfg.table_size() - 1)) {}
};

/// Corners of the voxel containing `p` (unit-cube coordinates) at one level.
/// Voxels are half-open; a point on the far boundary belongs to the last voxel.
/// Positions outside [0,1] are clamped and the derivative along a clamped axis is 0.
template <typename T> VoxelCorners<T> voxel_corners(const LevelGeometry& geo, const Vec3<T>& p) {
    const int res = geo.res;
    const T scale = T(res - 1);
    std::array<int, 3> cell{};
    std::array<T, 3> frac{};
    std::array<T, 3> dscale{};
    for (int a = 0; a < 3; ++a) {
        T x = p[a];
        dscale[a] = scale;
        if (!(x >= T(0))) {  // also catches NaN
            x = T(0);
            dscale[a] = T(0);
        } else if (x > T(1)) {
            x = T(1);
            dscale[a] = T(0);
        }
        const T pos = x * scale;
        int c = static_cast<int>(std::floor(pos));
        c = std::clamp(c, 0, res - 2);
        cell[a] = c;
        frac[a] = pos - T(c);
    }

    VoxelCorners<T> out;
    const bool dense = geo.dense;
    const auto mask = geo.mask;
    const auto n = static_cast<std::uint32_t>(res);
    for (int c = 0; c < 8; ++c) {
        const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
        const auto i = static_cast<std::uint32_t>(cell[0] + bx);
        const auto j = static_cast<std::uint32_t>(cell[1] + by);
        const auto k = static_cast<std::uint32_t>(cell[2] + bz);
        out.entry[c] = dense ? i + n * (j + n * k) : hash_detail::spatial_hash(i, j, k, mask);

        const T wx = bx ? frac[0] : T(1) - frac[0];
        const T wy = by ? frac[1] : T(1) - frac[1];
        const T wz = bz ? frac[2] : T(1) - frac[2];
        out.weight[c] = wx * wy * wz;
        const T sx = bx ? T(1) : T(-1);
        const T sy = by ? T(1) : T(-1);
        const T sz = bz ? T(1) : T(-1);
        out.dweight[c] = Vec3<T>(sx * dscale[0] * wy * wz, sy * dscale[1] * wx * wz, sz * dscale[2] * wx * wy);
    }
    return out;
}

template <typename T> VoxelCorners<T> voxel_corners(const HashGridConfig& cfg, int level, const Vec3<T>& p) {
    return voxel_corners(LevelGeometry(cfg, level), p);
}

} // namespace nsr
