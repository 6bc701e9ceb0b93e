// nsr: dataset generation, training, rendering, mesh extraction and evaluation.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "nsr/cli/commands.hpp"

namespace {

constexpr const char* kExamples = R"(Examples:
  nsr generate --scene sphere --views 20 --size 64 --out data/sphere
  nsr train --data data/sphere --config configs/desk.json --out runs/sphere
  nsr train --data data/rope --config configs/desk.json --constant-eikonal --out runs/rope_const
  nsr render --checkpoint runs/sphere/final.nsrckpt --data data/sphere --split val --out runs/sphere/val
  nsr extract --checkpoint runs/sphere/final.nsrckpt --resolution 128 --out runs/sphere/mesh.obj
  nsr eval --mesh runs/sphere/mesh.obj --gt data/sphere/ground_truth.obj

Exit codes: 0 success, 1 runtime or I/O error, 2 invalid usage or config,
3 empty mesh (failed reconstruction).
The default of --threads is read from NSR_THREADS.)";

// Default for --threads. CLI11 drops environment values that fail
// validation, so the variable is parsed here to reject bad values loudly.
int threads_from_env() {
    const char* v = std::getenv("NSR_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    nsr::require(*end == '\0' && n >= 1 && n <= 4096, nsr::ErrorCode::config,
                 std::string("NSR_THREADS must be a positive integer, got '") + v + "'");
    return int(n);
}

void add_common(CLI::App* cmd, nsr::CommonOptions& o, bool out_required, const std::string& out_help) {
    cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    cmd->add_option("--threads", o.threads, "Worker threads (default: NSR_THREADS or 1)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--config", o.config, "JSON config (see docs/config.md)")->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", o.out, out_help);
    if (out_required) out->required();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural surface reconstruction with adaptive Eikonal weighting.", "nsr"};
    app.footer(kExamples);
    app.set_version_flag("--version", nsr::kVersionString);
    app.require_subcommand(1);

    int threads = 1;
    try {
        threads = threads_from_env();
    } catch (const nsr::Error& err) {
        std::cerr << "nsr: " << err.what() << '\n';
        return 2;
    }

    nsr::GenerateOptions gen;
    gen.common.threads = threads;
    auto* g = app.add_subcommand("generate", "Render a synthetic scene into a posed image set with a ground-truth mesh");
    add_common(g, gen.common, true, "Output dataset directory");
    g->add_option("--scene", gen.scene, "Scene name: " + [] {
        std::string s;
        for (const auto& n : nsr::scene_names()) s += (s.empty() ? "" : ", ") + n;
        return s;
    }())->capture_default_str();
    g->add_option("--views", gen.views, "Training views");
    g->add_option("--val-views", gen.val_views, "Validation views");
    g->add_option("--size", gen.size, "Image width and height in pixels");
    g->add_option("--gt-resolution", gen.gt_resolution, "Marching-cubes resolution of the ground-truth mesh");

    nsr::TrainOptions tr;
    tr.common.threads = threads;
    auto* t = app.add_subcommand("train", "Train a field on a dataset; writes logs, checkpoints and a manifest");
    add_common(t, tr.common, true, "Run directory");
    t->add_option("--data", tr.data, "Dataset directory or transforms JSON")->required();
    t->add_option("--steps", tr.steps, "Override train.total_steps");
    t->add_flag("--no-lambda-r", tr.no_lambda_r, "Force the rendering-error factor to 1");
    t->add_flag("--no-lambda-g", tr.no_lambda_g, "Force the geometric-bias factor to 1");
    t->add_flag("--constant-eikonal", tr.constant_eikonal, "Force both factors to 1 (plain Eikonal loss)");

    nsr::RenderOptions rn;
    rn.common.threads = threads;
    auto* r = app.add_subcommand("render", "Render a checkpoint; reports PSNR/SSIM against dataset images");
    add_common(r, rn.common, true, "Output directory");
    r->add_option("--checkpoint", rn.checkpoint, "Checkpoint file")->required();
    auto* rdata = r->add_option("--data", rn.data, "Dataset whose views are rendered");
    r->add_option("--split", rn.split, "train, val or test")->capture_default_str();
    auto* rcam = r->add_option("--camera", rn.camera, "Single camera JSON instead of a dataset")->check(CLI::ExistingFile);
    rdata->excludes(rcam);
    r->add_option("--samples", rn.samples, "Samples per ray");

    nsr::ExtractOptions ex;
    ex.common.threads = threads;
    auto* e = app.add_subcommand("extract", "Extract the zero level set of a checkpoint as a mesh");
    add_common(e, ex.common, true, "Mesh path (.obj or .ply)");
    e->add_option("--checkpoint", ex.checkpoint, "Checkpoint file")->required();
    e->add_option("--resolution", ex.resolution, "Grid points per axis (>= 8)");

    nsr::EvalOptions ev;
    ev.common.threads = threads;
    auto* v = app.add_subcommand("eval", "Chamfer distance between a mesh and a ground-truth mesh");
    add_common(v, ev.common, false, "Optional JSON report path");
    v->add_option("--mesh", ev.mesh, "Reconstructed mesh")->required()->check(CLI::ExistingFile);
    v->add_option("--gt", ev.ground_truth, "Ground-truth mesh")->required()->check(CLI::ExistingFile);
    v->add_option("--samples", ev.samples, "Surface samples per mesh")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*g) {
            const auto data = nsr::cmd_generate(gen);
            std::cout << "wrote " << data.set.size() << " images and ground_truth.obj to " << gen.common.out << '\n';
        } else if (*t) {
            nsr::TrainHooks<float> progress;
            progress.on_step = [](const nsr::TrainLogEntry& s) {
                if (s.step % 500 == 0)
                    std::cerr << "step " << s.step << " loss " << s.total << " s " << s.s << " lr " << s.lr << '\n';
            };
            const auto run = nsr::cmd_train(tr, progress);
            const auto& val = run.result.validation.back();
            std::cout << "trained " << run.result.steps << " steps (" << run.result.aborted
                      << " aborted), validation PSNR " << val.psnr << " SSIM " << val.ssim << '\n';
        } else if (*r) {
            const auto metrics = nsr::cmd_render(rn);
            double sum = 0;
            for (const auto& m : metrics) sum += m.psnr;
            std::cout << "rendered to " << rn.common.out;
            if (!metrics.empty()) std::cout << ", mean PSNR " << sum / double(metrics.size());
            std::cout << '\n';
        } else if (*e) {
            const auto mesh = nsr::cmd_extract(ex);
            std::cout << "wrote " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles to "
                      << ex.common.out << '\n';
        } else if (*v) {
            std::cout << nsr::to_json(nsr::cmd_eval(ev)).dump(2) << '\n';
        }
    } catch (const nsr::Error& err) {
        std::cerr << "nsr: " << err.what() << '\n';
        return nsr::exit_code_for(err.code());
    } catch (const std::exception& err) {
        std::cerr << "nsr: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
