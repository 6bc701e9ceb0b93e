#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "nsr/cli/config.hpp"
#include "nsr/data/synthetic.hpp"
#include "nsr/data/transforms.hpp"
#include "nsr/field/checkpoint.hpp"
#include "nsr/field/geometric_init.hpp"
#include "nsr/mesh/marching_cubes.hpp"
#include "nsr/mesh/metrics.hpp"
#include "nsr/optim/train.hpp"

namespace nsr {

inline constexpr const char* kVersionString = "1.0.0";

/// Exit status of the nsr tool for an error of the given kind.
inline int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::empty_mesh: return 3;  // failed reconstruction
    case ErrorCode::config:
    case ErrorCode::parse: return 2;
    default: return 1;
    }
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Record of one command invocation, written as <out>/manifest.json.
struct RunManifest {
    std::string command;
    nlohmann::json config;
    nlohmann::json inputs = nlohmann::json::object();  // paths and names given on the command line
    std::uint64_t seed = 0;
    std::string started = utc_timestamp();
    std::string finished;
    std::map<std::string, std::filesystem::path> artifacts;

    /// Fails if any recorded artifact is missing.
    void write(const std::filesystem::path& path) {
        for (const auto& [name, p] : artifacts)
            require(std::filesystem::exists(p), ErrorCode::io, "manifest: artifact " + name + " missing at " + p.string());
        finished = utc_timestamp();
        nlohmann::json j{{"command", command}, {"version", kVersionString}, {"seed", seed},
                         {"started", started}, {"finished", finished},  {"config", config},
                         {"inputs", inputs}};
        j["artifacts"] = nlohmann::json::object();
        for (const auto& [name, p] : artifacts) j["artifacts"][name] = p.string();
        std::ofstream out(path);
        require(bool(out), ErrorCode::io, "cannot write " + path.string());
        out << j.dump(2) << '\n';
    }
};

struct CommonOptions {
    std::uint64_t seed = 0;
    int threads = 1;
    std::filesystem::path config;  // empty: defaults
    std::filesystem::path out;
};

inline RunConfig resolve_config(const CommonOptions& o) {
    require(o.threads >= 1, ErrorCode::config, "threads (--threads or NSR_THREADS) must be >= 1");
    return o.config.empty() ? RunConfig{} : load_config(o.config);
}

// ---------------------------------------------------------------- generate

struct GenerateOptions {
    CommonOptions common;
    std::string scene = "sphere";
    std::optional<int> views, val_views, size, gt_resolution;
};

inline SyntheticData cmd_generate(const GenerateOptions& o) {
    require(!o.common.out.empty(), ErrorCode::config, "generate: --out is required");
    RunConfig rc = resolve_config(o.common);
    if (o.views) rc.data.views = *o.views;
    if (o.val_views) rc.data.val_views = *o.val_views;
    if (o.size) rc.data.width = rc.data.height = *o.size;
    if (o.gt_resolution) rc.data.gt_resolution = *o.gt_resolution;
    rc.data.seed = o.common.seed;
    rc.data.threads = o.common.threads;
    rc.validate();
    const AnalyticScene scene = make_scene(o.scene);  // lists the choices on failure

    RunManifest m;
    m.command = "generate";
    m.seed = o.common.seed;
    m.config = to_json(rc);
    m.inputs["scene"] = o.scene;
    auto data = generate_synthetic(scene, rc.data);
    const auto& dir = o.common.out;
    write_transforms_json(data.set, dir);
    write_obj(data.ground_truth, dir / "ground_truth.obj");
    m.artifacts["transforms"] = dir / "transforms.json";
    m.artifacts["ground_truth"] = dir / "ground_truth.obj";
    for (std::size_t i = 0; i < data.set.size(); ++i)
        m.artifacts["image:" + data.set.names[i]] = dir / to_string(data.set.splits[i]) / (data.set.names[i] + ".png");
    m.write(dir / "manifest.json");
    return data;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
    CommonOptions common;
    std::filesystem::path data;
    bool no_lambda_r = false;
    bool no_lambda_g = false;
    bool constant_eikonal = false;  // both factors forced to 1
    std::optional<int> steps;
};

/// Applies the ablation flags to an adaptive configuration.
inline void apply_ablation(AdaptiveConfig& a, bool no_lambda_r, bool no_lambda_g, bool constant_eikonal) {
    if (no_lambda_r || constant_eikonal) a.use_lambda_r = false;
    if (no_lambda_g || constant_eikonal) a.use_lambda_g = false;
}

struct TrainRun {
    FieldParams<float> params;
    TrainResult result;
    GeometricInitReport init;
};

/// Geometric init, training, logs, checkpoints and <out>/manifest.json.
inline TrainRun cmd_train(const TrainOptions& o, const TrainHooks<float>& extra = {}) {
    require(!o.common.out.empty(), ErrorCode::config, "train: --out is required");
    require(std::filesystem::exists(o.data), ErrorCode::io, "train: dataset not found: " + o.data.string());
    RunConfig rc = resolve_config(o.common);
    if (o.steps) rc.train.total_steps = *o.steps;
    rc.train.seed = o.common.seed;
    apply_ablation(rc.train.adaptive, o.no_lambda_r, o.no_lambda_g, o.constant_eikonal);
    rc.validate();
    const auto set = load_transforms_json(o.data);

    RunManifest m;
    m.command = "train";
    m.seed = o.common.seed;
    m.config = to_json(rc);
    m.inputs["data"] = o.data.string();
    const auto& dir = o.common.out;
    std::filesystem::create_directories(dir);
    {
        std::ofstream snap(dir / "config.json");
        snap << to_json(rc).dump(2) << '\n';
    }

    TrainRun run{FieldParams<float>(rc.field), {}, {}};
    init_random(run.params, o.common.seed);
    run.init = geometric_init(run.params, o.common.seed, rc.init);
    {
        TrainOutput<float> out(dir);
        TrainHooks<float> hooks = out.hooks(rc.train.total_steps);
        if (extra.on_step) {
            hooks.on_step = [a = hooks.on_step, b = extra.on_step](const TrainLogEntry& e) {
                a(e);
                b(e);
            };
        }
        if (extra.on_validation) {
            hooks.on_validation = [a = hooks.on_validation, b = extra.on_validation](const ValidationEntry& e) {
                a(e);
                b(e);
            };
        }
        run.result = train(set, run.params, rc.train, hooks, o.common.threads);
    }
    m.artifacts["config"] = dir / "config.json";
    m.artifacts["checkpoint"] = dir / "final.nsrckpt";
    m.artifacts["train_log"] = dir / "train_log.jsonl";
    m.artifacts["validation_log"] = dir / "validation.jsonl";
    m.write(dir / "manifest.json");
    return run;
}

// ---------------------------------------------------------------- render

struct RenderOptions {
    CommonOptions common;
    std::filesystem::path checkpoint;
    std::filesystem::path data;    // dataset whose split is rendered
    std::string split = "val";
    std::filesystem::path camera;  // alternative: single camera JSON
    std::optional<int> samples;
};

struct ImageMetrics {
    std::string name;
    double psnr = 0, ssim = 0;
};

/// Camera file: {"w", "h", "camera_angle_x" or "fl_x" [, "fl_y", "cx", "cy"],
/// "transform_matrix"} with an OpenGL camera-to-world matrix in unit-cube
/// coordinates.
inline Camera load_camera_json(const std::filesystem::path& path) {
    using namespace transforms_detail;
    const auto j = read_json(path);
    const std::string where = path.string();
    try {
        const int w = j.at("w").get<int>(), h = j.at("h").get<int>();
        Intrinsics k = j.contains("fl_x") ? Intrinsics{j.at("fl_x").get<double>(), j.value("fl_y", j.at("fl_x").get<double>()),
                                                       j.value("cx", 0.5 * w), j.value("cy", 0.5 * h), w, h}
                                          : Intrinsics::from_fov_x(j.at("camera_angle_x").get<double>(), w, h);
        Camera cam;
        cam.intrinsics = k;
        cam.camera_to_world = opengl_to_camera(clean_pose(parse_matrix(j.at("transform_matrix"), where), where));
        cam.validate();
        return cam;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse, where + ": " + e.what());
    }
}

/// Renders each view to <out>/<name>.png; with ground truth available also
/// writes <out>/metrics.json holding per-image and mean PSNR/SSIM.
inline std::vector<ImageMetrics> cmd_render(const RenderOptions& o) {
    require(!o.common.out.empty(), ErrorCode::config, "render: --out is required");
    require(!o.checkpoint.empty(), ErrorCode::config, "render: --checkpoint is required");
    require(o.data.empty() != o.camera.empty(), ErrorCode::config, "render: give exactly one of --data or --camera");
    RunConfig rc = resolve_config(o.common);
    if (o.samples) rc.render_samples = *o.samples;
    rc.validate();
    const auto ck = load_checkpoint<float>(o.checkpoint);
    const NeuralField<float> field(ck.params);
    RenderConfig cfg;
    cfg.samples_per_ray = rc.samples_for_render();

    const auto& dir = o.common.out;
    std::filesystem::create_directories(dir);
    RunManifest m;
    m.command = "render";
    m.seed = o.common.seed;
    m.config = to_json(rc);
    m.inputs["checkpoint"] = o.checkpoint.string();
    m.inputs[o.camera.empty() ? "data" : "camera"] = (o.camera.empty() ? o.data : o.camera).string();
    std::vector<ImageMetrics> metrics;
    if (!o.camera.empty()) {
        const Camera cam = load_camera_json(o.camera);
        const auto img = render_image(cam, field, cfg, o.common.seed, o.common.threads).image;
        const auto name = o.camera.stem().string();
        write_png(img, dir / (name + ".png"));
        m.artifacts[name] = dir / (name + ".png");
    } else {
        const auto set = load_transforms_json(o.data);
        cfg.background = set.background;
        const auto views = set.indices(parse_split(o.split));
        require(!views.empty(), ErrorCode::config, "render: dataset has no " + o.split + " views");
        nlohmann::json report{{"split", o.split}, {"checkpoint", o.checkpoint.string()}, {"images", nlohmann::json::array()}};
        double sum_psnr = 0, sum_ssim = 0;
        for (std::size_t v : views) {
            const auto img = render_image(set.cameras[v], field, cfg, o.common.seed, o.common.threads).image;
            const ImageMetrics im{set.names[v], psnr(img, set.images[v]), ssim(img, set.images[v])};
            write_png(img, dir / (im.name + ".png"));
            m.artifacts[im.name] = dir / (im.name + ".png");
            report["images"].push_back({{"name", im.name}, {"psnr", im.psnr}, {"ssim", im.ssim}});
            sum_psnr += im.psnr;
            sum_ssim += im.ssim;
            metrics.push_back(im);
        }
        report["mean_psnr"] = sum_psnr / double(views.size());
        report["mean_ssim"] = sum_ssim / double(views.size());
        std::ofstream out(dir / "metrics.json");
        require(bool(out), ErrorCode::io, "cannot write " + (dir / "metrics.json").string());
        out << report.dump(2) << '\n';
        out.close();
        m.artifacts["metrics"] = dir / "metrics.json";
    }
    m.write(dir / "manifest.json");
    return metrics;
}

// ---------------------------------------------------------------- extract

struct ExtractOptions {
    CommonOptions common;  // out: mesh path (.obj or .ply)
    std::filesystem::path checkpoint;
    std::optional<int> resolution;
};

/// Marching cubes on the checkpoint's SDF over the unit cube. An empty
/// surface is an empty_mesh error and nothing is written.
inline TriangleMesh cmd_extract(const ExtractOptions& o) {
    require(!o.common.out.empty(), ErrorCode::config, "extract: --out is required");
    require(!o.checkpoint.empty(), ErrorCode::config, "extract: --checkpoint is required");
    RunConfig rc = resolve_config(o.common);
    if (o.resolution) rc.extract_resolution = *o.resolution;
    rc.validate();
    const auto ck = load_checkpoint<float>(o.checkpoint);
    ExtractConfig ex;
    ex.resolution = rc.extract_resolution;
    ex.threads = o.common.threads;
    auto mesh = extract_mesh(SdfOfField<float>(ck.params), ex);
    require(!mesh.empty(), ErrorCode::empty_mesh, "extract: the zero level set of " + o.checkpoint.string() + " is empty");
    if (o.common.out.has_parent_path()) std::filesystem::create_directories(o.common.out.parent_path());
    write_mesh(mesh, o.common.out);
    return mesh;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
    CommonOptions common;  // out: optional JSON report path
    std::filesystem::path mesh;
    std::filesystem::path ground_truth;
    std::size_t samples = 100000;
};

inline nlohmann::json to_json(const ChamferReport& r) {
    return {{"chamfer", r.chamfer}, {"accuracy", r.accuracy}, {"completeness", r.completeness}};
}

inline ChamferReport cmd_eval(const EvalOptions& o) {
    resolve_config(o.common);
    const auto a = read_mesh(o.mesh);
    const auto b = read_mesh(o.ground_truth);
    require(!a.empty(), ErrorCode::empty_mesh, "eval: " + o.mesh.string() + " is empty (failed reconstruction)");
    require(!b.empty(), ErrorCode::empty_mesh, "eval: " + o.ground_truth.string() + " is empty");
    const auto r = chamfer(a, b, o.samples, o.common.seed);
    if (!o.common.out.empty()) {
        if (o.common.out.has_parent_path()) std::filesystem::create_directories(o.common.out.parent_path());
        std::ofstream out(o.common.out);
        require(bool(out), ErrorCode::io, "cannot write " + o.common.out.string());
        auto j = to_json(r);
        j["mesh"] = o.mesh.string();
        j["ground_truth"] = o.ground_truth.string();
        j["samples"] = o.samples;
        out << j.dump(2) << '\n';
    }
    return r;
}

} // namespace nsr
