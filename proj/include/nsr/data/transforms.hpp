#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsr/common.hpp"
#include "nsr/data/dataset.hpp"
#include "nsr/data/png.hpp"

namespace nsr {

/// transforms.json stores camera-to-world matrices in the OpenGL convention
/// (+y up, camera looking along -z); Camera uses +y down, looking along +z.
/// Both directions are a right-multiplication by diag(1, -1, -1, 1).
inline Eigen::Matrix4d opengl_to_camera(const Eigen::Matrix4d& c2w_gl) {
    return c2w_gl * Eigen::Vector4d(1, -1, -1, 1).asDiagonal();
}
inline Eigen::Matrix4d camera_to_opengl(const Eigen::Matrix4d& c2w) {
    return c2w * Eigen::Vector4d(1, -1, -1, 1).asDiagonal();
}

namespace transforms_detail {

using json = nlohmann::json;

inline Eigen::Matrix4d parse_matrix(const json& j, const std::string& where) {
    require(j.is_array() && (j.size() == 4 || j.size() == 3), ErrorCode::parse, where + ": transform_matrix must be 3x4 or 4x4");
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (std::size_t r = 0; r < j.size(); ++r) {
        require(j[r].is_array() && j[r].size() == 4, ErrorCode::parse, where + ": transform_matrix rows need 4 entries");
        for (int c = 0; c < 4; ++c) {
            require(j[r][c].is_number(), ErrorCode::parse, where + ": non-numeric matrix entry");
            m(Eigen::Index(r), c) = j[r][c].get<double>();
        }
    }
    return m;
}

/// Rotation part projected onto SO(3). Poses in files are rounded, so small
/// deviations are repaired; singular or strongly sheared matrices are rejected.
inline Eigen::Matrix4d clean_pose(const Eigen::Matrix4d& m, const std::string& where) {
    require(m.allFinite(), ErrorCode::invalid_transform, where + ": non-finite transform");
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    require(std::abs(r.determinant()) > 1e-8, ErrorCode::invalid_transform, where + ": transform is not invertible");
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sv = svd.singularValues();
    require(sv.maxCoeff() - sv.minCoeff() < 1e-3 * sv.maxCoeff(), ErrorCode::invalid_transform,
            where + ": rotation is not orthonormal (scaled or sheared pose)");
    Eigen::Matrix3d rot = svd.matrixU() * svd.matrixV().transpose();
    require(rot.determinant() > 0, ErrorCode::invalid_transform, where + ": pose is a reflection");
    Eigen::Matrix4d out = m;
    out.topLeftCorner<3, 3>() = rot;
    out.row(3) << 0, 0, 0, 1;
    return out;
}

inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(bool(in), ErrorCode::io, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse, path.string() + ": " + e.what());
    }
}

inline void load_file(const std::filesystem::path& path, std::optional<Split> default_split, const Vec3d& background,
                      PosedImageSet& set) {
    const json j = read_json(path);
    const std::string where = path.string();
    require(j.is_object(), ErrorCode::parse, where + ": top level must be an object");
    require(j.contains("frames") && j["frames"].is_array(), ErrorCode::parse, where + ": missing 'frames' array");
    const bool has_fov = j.contains("camera_angle_x");
    const bool has_focal = j.contains("fl_x");
    require(has_fov || has_focal, ErrorCode::parse, where + ": need camera_angle_x or fl_x");
    if (j.contains("aabb")) {
        const auto& a = j["aabb"];
        require(a.is_array() && a.size() == 2 && a[0].size() == 3 && a[1].size() == 3, ErrorCode::parse,
                where + ": aabb must be [[x,y,z],[x,y,z]]");
        set.normalization = Normalization::fit(Vec3d(a[0][0], a[0][1], a[0][2]), Vec3d(a[1][0], a[1][1], a[1][2]));
    }
    const auto dir = path.parent_path();
    int index = 0;
    for (const auto& f : j["frames"]) {
        const std::string fw = where + " frame " + std::to_string(index++);
        require(f.contains("file_path") && f["file_path"].is_string(), ErrorCode::parse, fw + ": missing file_path");
        require(f.contains("transform_matrix"), ErrorCode::parse, fw + ": missing transform_matrix");
        std::filesystem::path file = dir / f["file_path"].get<std::string>();
        if (!file.has_extension()) file += ".png";
        require(std::filesystem::exists(file), ErrorCode::missing_image, "missing image " + file.string());
        Image img = read_png(file, background);

        Intrinsics k;
        k.width = img.width;
        k.height = img.height;
        if (has_focal) {
            k.fx = j["fl_x"].get<double>();
            k.fy = j.value("fl_y", k.fx);
        } else {
            k = Intrinsics::from_fov_x(j["camera_angle_x"].get<double>(), img.width, img.height);
        }
        k.cx = j.value("cx", 0.5 * img.width);
        k.cy = j.value("cy", 0.5 * img.height);

        Camera cam;
        cam.intrinsics = k;
        cam.camera_to_world = opengl_to_camera(clean_pose(parse_matrix(f["transform_matrix"], fw), fw));
        Split split = default_split.value_or(Split::train);
        if (f.contains("split")) split = parse_split(f["split"].get<std::string>());

        set.images.push_back(std::move(img));
        set.cameras.push_back(cam);
        set.splits.push_back(split);
        set.names.push_back(file.stem().string());
    }
}

} // namespace transforms_detail

/// Loads a NeRF-synthetic style dataset. `path` is either a JSON file or a
/// directory holding transforms.json or transforms_{train,val,test}.json.
/// Frames may carry a "split" key; the optional top-level "aabb" defines the
/// scene box mapped into the unit cube.
inline PosedImageSet load_transforms_json(const std::filesystem::path& path, const Vec3d& background = Vec3d::Ones()) {
    PosedImageSet set;
    set.background = background;
    if (std::filesystem::is_directory(path)) {
        if (std::filesystem::exists(path / "transforms.json")) {
            transforms_detail::load_file(path / "transforms.json", std::nullopt, background, set);
        } else {
            bool any = false;
            for (Split s : {Split::train, Split::val, Split::test}) {
                const auto file = path / (std::string("transforms_") + to_string(s) + ".json");
                if (!std::filesystem::exists(file)) continue;
                transforms_detail::load_file(file, s, background, set);
                any = true;
            }
            require(any, ErrorCode::io, "no transforms json found in " + path.string());
        }
    } else {
        require(std::filesystem::exists(path), ErrorCode::io, "dataset file not found: " + path.string());
        transforms_detail::load_file(path, std::nullopt, background, set);
    }
    require(!set.images.empty(), ErrorCode::parse, path.string() + ": no frames");
    for (auto& cam : set.cameras) cam = set.normalization.apply(cam);
    set.validate();
    return set;
}

/// Writes `set` as <dir>/transforms.json plus <dir>/<split>/<name>.png.
/// Cameras are written in unit-cube coordinates.
inline void write_transforms_json(const PosedImageSet& set, const std::filesystem::path& dir) {
    using json = nlohmann::json;
    set.validate();
    std::filesystem::create_directories(dir);
    const auto& k0 = set.cameras[0].intrinsics;
    json j;
    j["camera_angle_x"] = k0.fov_x();
    j["fl_x"] = k0.fx;
    j["fl_y"] = k0.fy;
    j["cx"] = k0.cx;
    j["cy"] = k0.cy;
    j["w"] = k0.width;
    j["h"] = k0.height;
    j["frames"] = json::array();
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& k = set.cameras[i].intrinsics;
        require(k.fx == k0.fx && k.fy == k0.fy && k.cx == k0.cx && k.cy == k0.cy, ErrorCode::contract,
                "write_transforms_json: all cameras must share intrinsics");
        const std::string name = i < set.names.size() ? set.names[i] : "r_" + std::to_string(i);
        const std::string rel = std::string(to_string(set.splits[i])) + "/" + name + ".png";
        std::filesystem::create_directories(dir / to_string(set.splits[i]));
        write_png(set.images[i], dir / rel);
        const Eigen::Matrix4d m = camera_to_opengl(set.cameras[i].camera_to_world);
        json mat = json::array();
        for (int r = 0; r < 4; ++r) mat.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
        j["frames"].push_back({{"file_path", "./" + rel}, {"split", to_string(set.splits[i])}, {"transform_matrix", mat}});
    }
    std::ofstream out(dir / "transforms.json");
    require(bool(out), ErrorCode::io, "cannot write " + (dir / "transforms.json").string());
    out << j.dump(2) << '\n';
}

} // namespace nsr
