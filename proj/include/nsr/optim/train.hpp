#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsr/common.hpp"
#include "nsr/data/dataset.hpp"
#include "nsr/field/checkpoint.hpp"
#include "nsr/field/field.hpp"
#include "nsr/loss/losses.hpp"
#include "nsr/mesh/metrics.hpp"
#include "nsr/optim/adam.hpp"
#include "nsr/optim/schedule.hpp"
#include "nsr/render/render.hpp"

namespace nsr {

struct TrainLogEntry {
    int step = 0;
    double l_rgb = 0, l_sdf = 0, total = 0;
    double mean_lambda_r = 0, mean_lambda_g = 0;
    double min_lambda_r = 0, max_lambda_r = 0, min_lambda_g = 0, max_lambda_g = 0;
    double s = 0, lr = 0;
    int active_levels = 0;
    bool aborted = false;
    std::string diagnostic;
};

struct ValidationEntry {
    int step = 0;
    double psnr = 0;
    double ssim = 0;
};

/// Optional observers; the trainer calls them synchronously.
template <typename T> struct TrainHooks {
    std::function<void(const TrainLogEntry&)> on_step;
    std::function<void(const ValidationEntry&)> on_validation;
    std::function<void(int step, const FieldParams<T>&)> on_checkpoint;
};

struct TrainResult {
    int steps = 0;
    int aborted = 0;
    std::vector<TrainLogEntry> log;
    std::vector<ValidationEntry> validation;
};

inline nlohmann::json to_json(const TrainLogEntry& e) {
    nlohmann::json j{{"step", e.step},
                     {"l_rgb", e.l_rgb},
                     {"l_sdf", e.l_sdf},
                     {"total", e.total},
                     {"mean_lambda_r", e.mean_lambda_r},
                     {"mean_lambda_g", e.mean_lambda_g},
                     {"s", e.s},
                     {"lr", e.lr},
                     {"active_levels", e.active_levels}};
    if (e.aborted) {
        j["aborted"] = true;
        j["diagnostic"] = e.diagnostic;
    }
    return j;
}

inline nlohmann::json to_json(const ValidationEntry& e) {
    return {{"step", e.step}, {"psnr", e.psnr}, {"ssim", e.ssim}};
}

/// Mean PSNR and SSIM of `params` over up to `max_views` images of `split`
/// (falling back to the train split when `split` is empty).
template <typename T>
ValidationEntry evaluate_views(const PosedImageSet& set, const FieldParams<T>& params, LevelMask mask, Split split,
                               int samples_per_ray, int max_views, int threads = 1) {
    auto views = set.indices(split);
    if (views.empty()) views = set.indices(Split::train);
    if (max_views >= 0 && views.size() > std::size_t(max_views)) views.resize(std::size_t(max_views));
    ValidationEntry e;
    if (views.empty()) return e;
    RenderConfig rc;
    rc.samples_per_ray = samples_per_ray;
    rc.background = set.background;
    const NeuralField<T> field(params, mask);
    for (std::size_t v : views) {
        const auto img = render_image(set.cameras[v], field, rc, 0, threads).image;
        e.psnr += psnr(img, set.images[v]);
        e.ssim += ssim(img, set.images[v]);
    }
    e.psnr /= double(views.size());
    e.ssim /= double(views.size());
    return e;
}

/// Optimizes `params` on the train split of `set`. Every step samples
/// batch_rays pixels, renders them with samples_per_ray jittered samples,
/// evaluates L_total and applies one Adam update. Steps whose loss or
/// gradient is non-finite are skipped; the run fails once more than
/// max_abort_fraction of total_steps have been skipped. Deterministic for a
/// given seed.
template <typename T>
TrainResult train(const PosedImageSet& set, FieldParams<T>& params, const TrainConfig& cfg,
                  const TrainHooks<T>& hooks = {}, int threads = 1) {
    cfg.validate();
    set.validate();
    const int levels = params.config().grid.num_levels;
    // Adam groups: hash tables, MLP weights, s_log
    const auto& lay = params.layout();
    const Eigen::Index tables_end = Eigen::Index(lay.tables_end), s_index = Eigen::Index(lay.s_log);
    AdamState<T> adam_tables{std::size_t(tables_end)};
    AdamState<T> adam_mlp{std::size_t(s_index - tables_end)};
    AdamState<T> adam_s{1};
    VecX<T> grad = params.zero_gradient();
    TrainResult result;
    const int max_aborts = int(cfg.max_abort_fraction * cfg.total_steps);

    RenderConfig rc;
    rc.samples_per_ray = cfg.samples_per_ray;
    rc.jitter = cfg.jitter;
    rc.background = set.background;

    auto validate_now = [&](int step, LevelMask mask) {
        const auto e0 = evaluate_views(set, params, mask, Split::val, cfg.samples_per_ray, cfg.validation_views, threads);
        ValidationEntry e = e0;
        e.step = step;
        result.validation.push_back(e);
        if (hooks.on_validation) hooks.on_validation(e);
    };

    for (int step = 0; step < cfg.total_steps; ++step) {
        const LevelMask mask{active_levels_at(step, cfg, levels)};
        const double lr = lr_at(step, cfg);
        const auto batch = sample_pixel_batch(set, std::size_t(cfg.batch_rays), cfg.seed, std::uint64_t(step),
                                              SampleMode::uniform, rc.bounds);
        const auto rendered = render_batch(params, mask, batch.rays, rc, mix_seed(cfg.seed, 0x5e9, std::uint64_t(step)));
        grad.setZero();
        const auto loss = total_loss(params, rendered, batch.colors, cfg.adaptive, &grad);

        TrainLogEntry e;
        e.step = step;
        e.lr = lr;
        e.active_levels = mask.active_levels;
        e.l_rgb = loss.l_rgb;
        e.l_sdf = loss.l_sdf;
        e.total = loss.total;
        e.mean_lambda_r = loss.mean_lambda_r();
        e.mean_lambda_g = loss.mean_lambda_g();
        if (!loss.lambda_r.empty()) {
            e.min_lambda_r = *std::min_element(loss.lambda_r.begin(), loss.lambda_r.end());
            e.max_lambda_r = *std::max_element(loss.lambda_r.begin(), loss.lambda_r.end());
            e.min_lambda_g = *std::min_element(loss.lambda_g.begin(), loss.lambda_g.end());
            e.max_lambda_g = *std::max_element(loss.lambda_g.begin(), loss.lambda_g.end());
        }
        if (loss.finite) {
            auto& v = params.values();
            adam_step(v.head(tables_end), grad.head(tables_end), adam_tables, lr, cfg.adam);
            adam_step(v.segment(tables_end, s_index - tables_end), grad.segment(tables_end, s_index - tables_end),
                      adam_mlp, lr * cfg.mlp_lr_scale, cfg.adam);
            adam_step(v.segment(s_index, 1), grad.segment(s_index, 1), adam_s, lr, cfg.adam);
        } else {
            e.aborted = true;
            e.diagnostic = loss.diagnostic;
            ++result.aborted;
        }
        e.s = double(params.sharpness());
        result.log.push_back(e);
        result.steps = step + 1;
        if (hooks.on_step) hooks.on_step(e);
        require(result.aborted <= max_aborts, ErrorCode::non_finite,
                "training failed: " + std::to_string(result.aborted) + " aborted steps (last: " + loss.diagnostic + ")");

        const int done = step + 1;
        if (done < cfg.total_steps) {
            if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
                hooks.on_checkpoint(done, params);
            if (cfg.validate_every > 0 && done % cfg.validate_every == 0)
                validate_now(done, LevelMask{active_levels_at(done, cfg, levels)});
        }
    }
    if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.total_steps, params);
    validate_now(cfg.total_steps, LevelMask{active_levels_at(cfg.total_steps, cfg, levels)});
    return result;
}

/// Hooks writing <dir>/train_log.jsonl, <dir>/validation.jsonl and
/// <dir>/checkpoints/step_NNNNNN.nsrckpt plus <dir>/final.nsrckpt.
template <typename T> class TrainOutput {
public:
    explicit TrainOutput(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_ / "checkpoints");
        log_.open(dir_ / "train_log.jsonl");
        val_.open(dir_ / "validation.jsonl");
        require(bool(log_) && bool(val_), ErrorCode::io, "cannot write training logs in " + dir_.string());
    }

    TrainHooks<T> hooks(int total_steps) {
        TrainHooks<T> h;
        h.on_step = [this](const TrainLogEntry& e) { log_ << to_json(e).dump() << '\n'; };
        h.on_validation = [this](const ValidationEntry& e) { val_ << to_json(e).dump() << '\n' << std::flush; };
        h.on_checkpoint = [this, total_steps](int step, const FieldParams<T>& p) {
            std::ostringstream name;
            name << "step_" << std::setw(6) << std::setfill('0') << step << ".nsrckpt";
            save_checkpoint(p, std::uint64_t(step), dir_ / "checkpoints" / name.str());
            if (step == total_steps) save_checkpoint(p, std::uint64_t(step), dir_ / "final.nsrckpt");
            log_.flush();
        };
        return h;
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::ofstream log_, val_;
};

} // namespace nsr
