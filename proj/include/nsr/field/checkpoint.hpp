#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field/params.hpp"

namespace nsr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

/// Checkpoint layout, version 1, all integers and floats little endian:
///
///   offset  size  content
///   0       8     magic "NSRCKPT\0"
///   8       4     u32 format version (1)
///   12      4     u32 bytes per stored parameter (4 = float, 8 = double)
///   16      32    i32 x 8: num_levels, base_resolution, max_resolution,
///                 features_per_level, table_size_log2, sdf_hidden,
///                 geo_features, color_hidden
///   48      24    f64 x 3: softplus_beta, init_radius, init_s
///   72      8     u64 training step
///   80      8     u64 parameter count P
///   88      P*b   parameters in ParamLayout order (tables, SDF MLP, color MLP, s_log)
///   ...     8     u64 FNV-1a hash of all preceding bytes
///
/// See docs/checkpoint.md.
inline constexpr char kCheckpointMagic[8] = {'N', 'S', 'R', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T> struct Checkpoint {
    FieldParams<T> params;
    std::uint64_t step = 0;
};

namespace checkpoint_detail {

inline std::uint64_t fnv1a(const std::vector<char>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename V> void put(std::vector<char>& out, V v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + sizeof(V));
}

struct Reader {
    const std::vector<char>& bytes;
    std::size_t pos = 0;
    std::string path;

    template <typename V> V get() {
        require(pos + sizeof(V) <= bytes.size(), ErrorCode::parse, path + ": truncated checkpoint");
        V v;
        std::memcpy(&v, bytes.data() + pos, sizeof(V));
        pos += sizeof(V);
        return v;
    }
};

} // namespace checkpoint_detail

template <typename T>
std::vector<char> serialize_checkpoint(const FieldParams<T>& params, std::uint64_t step) {
    using namespace checkpoint_detail;
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    const auto& c = params.config();
    std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, sizeof(T));
    for (std::int32_t v : {c.grid.num_levels, c.grid.base_resolution, c.grid.max_resolution, c.grid.features_per_level,
                           c.grid.table_size_log2, c.sdf_hidden, c.geo_features, c.color_hidden})
        put<std::int32_t>(out, v);
    for (double v : {c.softplus_beta, c.init_radius, c.init_s}) put<double>(out, v);
    put<std::uint64_t>(out, step);
    put<std::uint64_t>(out, params.size());
    const char* data = reinterpret_cast<const char*>(params.values().data());
    out.insert(out.end(), data, data + params.size() * sizeof(T));
    put<std::uint64_t>(out, fnv1a(out));
    return out;
}

template <typename T> void save_checkpoint(const FieldParams<T>& params, std::uint64_t step, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(params, step);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // write then rename so readers never observe a partial file
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        require(bool(out), ErrorCode::io, "cannot write " + tmp.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        require(bool(out), ErrorCode::io, "write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Loads a checkpoint stored with either parameter width and converts it to T.
template <typename T> Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    using namespace checkpoint_detail;
    std::ifstream in(path, std::ios::binary);
    require(bool(in), ErrorCode::io, "cannot open checkpoint " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string();
    require(bytes.size() >= 96 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorCode::parse,
            where + ": not a checkpoint file");
    Reader r{bytes, 8, where};
    const auto version = r.get<std::uint32_t>();
    require(version == kCheckpointVersion, ErrorCode::parse,
            where + ": unsupported checkpoint version " + std::to_string(version));
    const auto width = r.get<std::uint32_t>();
    require(width == 4 || width == 8, ErrorCode::parse, where + ": bad parameter width");

    FieldConfig c;
    c.grid.num_levels = r.get<std::int32_t>();
    c.grid.base_resolution = r.get<std::int32_t>();
    c.grid.max_resolution = r.get<std::int32_t>();
    c.grid.features_per_level = r.get<std::int32_t>();
    c.grid.table_size_log2 = r.get<std::int32_t>();
    c.sdf_hidden = r.get<std::int32_t>();
    c.geo_features = r.get<std::int32_t>();
    c.color_hidden = r.get<std::int32_t>();
    c.softplus_beta = r.get<double>();
    c.init_radius = r.get<double>();
    c.init_s = r.get<double>();
    try {
        c.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::parse, where + ": invalid field configuration (" + e.what() + ")");
    }
    const auto step = r.get<std::uint64_t>();
    const auto count = r.get<std::uint64_t>();
    Checkpoint<T> ck{FieldParams<T>(c), step};
    require(count == ck.params.size(), ErrorCode::parse, where + ": parameter count does not match the configuration");
    require(bytes.size() == r.pos + count * width + 8, ErrorCode::parse, where + ": unexpected file size");
    const std::vector<char> body(bytes.begin(), bytes.end() - 8);
    Reader tail{bytes, bytes.size() - 8, where};
    require(tail.get<std::uint64_t>() == fnv1a(body), ErrorCode::parse, where + ": checksum mismatch");

    auto& v = ck.params.values();
    for (std::size_t i = 0; i < count; ++i) {
        if (width == 4) v[Eigen::Index(i)] = static_cast<T>(r.get<float>());
        else v[Eigen::Index(i)] = static_cast<T>(r.get<double>());
    }
    require(v.allFinite(), ErrorCode::non_finite, where + ": checkpoint holds non-finite parameters");
    return ck;
}

} // namespace nsr
