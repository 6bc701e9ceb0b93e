#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "nsr/common.hpp"
#include "nsr/loss/losses.hpp"
#include "nsr/optim/adam.hpp"

namespace nsr {

struct TrainConfig {
    int total_steps = 20000;
    int batch_rays = 1024;       // m
    int samples_per_ray = 128;   // n
    double lr_start = 1e-2;
    double lr_end = 1e-4;
    double mlp_lr_scale = 0.1;  // MLP weights step at this multiple of lr_at; tables and s_log at lr_at
    AdamConfig adam;
    int initial_levels = 4;
    int steps_per_level = 2000;
    std::uint64_t seed = 0;
    AdaptiveConfig adaptive;
    bool jitter = true;
    int checkpoint_every = 1000;  // 0: final checkpoint only
    int validate_every = 0;       // 0: validate after the last step only
    int validation_views = 4;     // at most this many val images are rendered
    double max_abort_fraction = 0.01;

    void validate() const {
        require(total_steps >= 0, ErrorCode::config, "train: total_steps must be >= 0");
        require(batch_rays >= 1 && samples_per_ray >= 2, ErrorCode::config,
                "train: batch_rays must be >= 1 and samples_per_ray >= 2");
        require(lr_end > 0 && lr_start >= lr_end, ErrorCode::config, "train: need lr_start >= lr_end > 0");
        require(mlp_lr_scale > 0, ErrorCode::config, "train: mlp_lr_scale must be > 0");
        require(initial_levels >= 1 && steps_per_level >= 1, ErrorCode::config,
                "train: initial_levels and steps_per_level must be >= 1");
        require(checkpoint_every >= 0 && validate_every >= 0 && validation_views >= 0, ErrorCode::config,
                "train: intervals must be >= 0");
        require(max_abort_fraction >= 0 && max_abort_fraction < 1, ErrorCode::config,
                "train: max_abort_fraction must be in [0, 1)");
        adam.validate();
        adaptive.validate();
    }
};

/// lr_start (lr_end / lr_start)^(step / total_steps).
inline double lr_at(int step, const TrainConfig& cfg) {
    require(step >= 0 && step <= std::max(cfg.total_steps, 0), ErrorCode::contract, "lr_at: step out of range");
    if (step == 0 || cfg.total_steps == 0) return cfg.lr_start;
    if (step == cfg.total_steps) return cfg.lr_end;
    return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, double(step) / double(cfg.total_steps));
}

/// Hash levels enabled at `step`: initial_levels during the first
/// steps_per_level steps, then one more per window, capped at `num_levels`.
inline int active_levels_at(int step, const TrainConfig& cfg, int num_levels) {
    require(step >= 0, ErrorCode::contract, "active_levels_at: step must be >= 0");
    const long levels = long(cfg.initial_levels) + long(step / cfg.steps_per_level);
    return int(std::min<long>(num_levels, levels));
}

} // namespace nsr
