#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nsr/common.hpp"

namespace nsr {

struct TriangleMesh {
    std::vector<Vec3d> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;

    bool empty() const { return triangles.empty(); }

    /// Throws a contract error on out-of-range or repeated indices or
    /// non-finite coordinates.
    void validate() const {
        for (const auto& v : vertices) require(v.allFinite(), ErrorCode::contract, "mesh: non-finite vertex");
        for (const auto& t : triangles) {
            for (auto i : t) require(i < vertices.size(), ErrorCode::contract, "mesh: index out of range");
            require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], ErrorCode::contract, "mesh: degenerate triangle");
        }
    }

    double area() const {
        double a = 0;
        for (const auto& t : triangles)
            a += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
        return a;
    }

    /// Signed enclosed volume; positive when triangles wind counter-clockwise
    /// seen from outside.
    double signed_volume() const {
        double v = 0;
        for (const auto& t : triangles) v += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
        return v / 6.0;
    }

    std::pair<Vec3d, Vec3d> bounding_box() const {
        Vec3d lo = Vec3d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
        for (const auto& v : vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        return {lo, hi};
    }
};

namespace mesh_detail {

inline std::string lower_ext(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e;
}

} // namespace mesh_detail

inline void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    require(bool(out), ErrorCode::io, "cannot write " + path.string());
    out.precision(9);
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    require(bool(out), ErrorCode::io, "write failed: " + path.string());
}

/// Reads vertices and faces; polygons are fan-triangulated and texture or
/// normal indices (`f 1/2/3`) are ignored. Negative indices are relative.
inline TriangleMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(bool(in), ErrorCode::io, "cannot open " + path.string());
    TriangleMesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3d v;
            ss >> v.x() >> v.y() >> v.z();
            require(!ss.fail(), ErrorCode::parse, path.string() + ":" + std::to_string(line_no) + ": bad vertex");
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<std::uint32_t> idx;
            std::string tok;
            while (ss >> tok) {
                const long i = std::stol(tok.substr(0, tok.find('/')));
                const long resolved = i < 0 ? long(mesh.vertices.size()) + i : i - 1;
                require(resolved >= 0 && resolved < long(mesh.vertices.size()), ErrorCode::parse,
                        path.string() + ":" + std::to_string(line_no) + ": face index out of range");
                idx.push_back(std::uint32_t(resolved));
            }
            require(idx.size() >= 3, ErrorCode::parse, path.string() + ":" + std::to_string(line_no) + ": short face");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    return mesh;
}

/// Binary little-endian PLY with float vertices and uchar/int faces.
inline void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(bool(out), ErrorCode::io, "cannot write " + path.string());
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\nproperty float x\nproperty float y\nproperty float z\n"
        << "element face " << mesh.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices) {
        const float f[3] = {float(v.x()), float(v.y()), float(v.z())};
        out.write(reinterpret_cast<const char*>(f), sizeof f);
    }
    for (const auto& t : mesh.triangles) {
        const unsigned char n = 3;
        const std::int32_t idx[3] = {std::int32_t(t[0]), std::int32_t(t[1]), std::int32_t(t[2])};
        out.write(reinterpret_cast<const char*>(&n), 1);
        out.write(reinterpret_cast<const char*>(idx), sizeof idx);
    }
    require(bool(out), ErrorCode::io, "write failed: " + path.string());
}

/// Reads the layout produced by write_ply (binary little endian, float xyz
/// first, uchar/int or uchar/uint face lists). Other vertex properties must be floats.
inline TriangleMesh read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), ErrorCode::io, "cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    require(line == "ply", ErrorCode::parse, path.string() + ": not a PLY file");
    std::size_t nv = 0, nf = 0, vprops = 0;
    bool in_vertex = false, binary = false;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string a, b, c;
        ss >> a >> b >> c;
        if (a == "format") binary = b == "binary_little_endian";
        else if (a == "element") {
            in_vertex = b == "vertex";
            (in_vertex ? nv : nf) = std::stoull(c);
        } else if (a == "property" && in_vertex) {
            require(b == "float", ErrorCode::parse, path.string() + ": only float vertex properties supported");
            ++vprops;
        } else if (a == "end_header") break;
    }
    require(binary && vprops >= 3, ErrorCode::parse, path.string() + ": unsupported PLY layout");
    TriangleMesh mesh;
    mesh.vertices.resize(nv);
    std::vector<float> buf(vprops);
    for (auto& v : mesh.vertices) {
        in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(vprops * sizeof(float)));
        v = Vec3d(buf[0], buf[1], buf[2]);
    }
    for (std::size_t f = 0; f < nf; ++f) {
        unsigned char n = 0;
        in.read(reinterpret_cast<char*>(&n), 1);
        std::vector<std::int32_t> idx(n);
        in.read(reinterpret_cast<char*>(idx.data()), std::streamsize(n * sizeof(std::int32_t)));
        require(bool(in) && n >= 3, ErrorCode::parse, path.string() + ": truncated face list");
        for (auto i : idx)
            require(i >= 0 && std::size_t(i) < nv, ErrorCode::parse, path.string() + ": face index out of range");
        for (int k = 1; k + 1 < n; ++k)
            mesh.triangles.push_back({std::uint32_t(idx[0]), std::uint32_t(idx[k]), std::uint32_t(idx[k + 1])});
    }
    require(bool(in), ErrorCode::parse, path.string() + ": truncated file");
    return mesh;
}

inline TriangleMesh read_mesh(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), ErrorCode::io, "mesh file not found: " + path.string());
    const auto ext = mesh_detail::lower_ext(path);
    if (ext == ".obj") return read_obj(path);
    if (ext == ".ply") return read_ply(path);
    throw Error(ErrorCode::io, "unknown mesh extension: " + path.string());
}

inline void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
    const auto ext = mesh_detail::lower_ext(path);
    if (ext == ".obj") return write_obj(mesh, path);
    if (ext == ".ply") return write_ply(mesh, path);
    throw Error(ErrorCode::io, "unknown mesh extension: " + path.string());
}

} // namespace nsr
