#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field/hash_grid.hpp"

namespace nsr {

/// Architecture of the neural field. The SDF head is
/// [h(x); 2x-1] -> hidden -> hidden -> [sdf; geometry features] with softplus
/// activations, the color head is [geo; 2x-1; view; normal] -> hidden -> hidden -> rgb
/// with ReLU activations and a sigmoid output.
struct FieldConfig {
    HashGridConfig grid;
    int sdf_hidden = 64;
    int geo_features = 15;
    int color_hidden = 64;
    double softplus_beta = 10.0;
    double init_radius = 0.25;
    double init_s = 30.0;

    void validate() const {
        grid.validate();
        require(sdf_hidden >= 1 && color_hidden >= 1, ErrorCode::config, "field: hidden widths must be >= 1");
        require(geo_features >= 0, ErrorCode::config, "field: geo_features must be >= 0");
        require(softplus_beta > 0.0, ErrorCode::config, "field: softplus_beta must be > 0");
        require(init_radius > 0.0 && init_radius < 0.5, ErrorCode::config, "field: init_radius must be in (0, 0.5)");
        require(init_s > 0.0, ErrorCode::config, "field: init_s must be > 0");
    }

    int sdf_input_dim() const { return grid.encoding_dim() + 3; }
    int sdf_output_dim() const { return 1 + geo_features; }
    int color_input_dim() const { return geo_features + 9; }

    friend bool operator==(const FieldConfig&, const FieldConfig&) = default;
};

/// Offsets of every parameter block inside the flat parameter vector.
struct ParamLayout {
    struct Block {
        std::size_t offset = 0;
        int rows = 0;
        int cols = 0;
        std::size_t size() const { return std::size_t(rows) * std::size_t(cols); }
    };

    std::vector<Block> tables;
    Block sdf_w1, sdf_b1, sdf_w2, sdf_b2, sdf_w3, sdf_b3;
    Block col_w1, col_b1, col_w2, col_b2, col_w3, col_b3;
    std::size_t s_log = 0;
    std::size_t total = 0;
    std::size_t tables_end = 0;

    explicit ParamLayout(const FieldConfig& cfg) {
        std::size_t off = 0;
        auto take = [&](int rows, int cols) {
            Block b{off, rows, cols};
            off += b.size();
            return b;
        };
        const int d = cfg.grid.features_per_level;
        for (int l = 0; l < cfg.grid.num_levels; ++l)
            tables.push_back(take(d, static_cast<int>(cfg.grid.level_entries(l))));
        tables_end = off;
        const int h = cfg.sdf_hidden, ch = cfg.color_hidden;
        sdf_w1 = take(h, cfg.sdf_input_dim());
        sdf_b1 = take(h, 1);
        sdf_w2 = take(h, h);
        sdf_b2 = take(h, 1);
        sdf_w3 = take(cfg.sdf_output_dim(), h);
        sdf_b3 = take(cfg.sdf_output_dim(), 1);
        col_w1 = take(ch, cfg.color_input_dim());
        col_b1 = take(ch, 1);
        col_w2 = take(ch, ch);
        col_b2 = take(ch, 1);
        col_w3 = take(3, ch);
        col_b3 = take(3, 1);
        s_log = off++;
        total = off;
    }
};

/// All trainable state of the field in one flat vector so the optimizer,
/// gradient buffers and checkpoints can treat it uniformly.
template <typename T> class FieldParams {
public:
    using MatMap = Eigen::Map<Mat<T>>;
    using ConstMatMap = Eigen::Map<const Mat<T>>;

    explicit FieldParams(FieldConfig cfg) : cfg_(cfg), layout_((cfg.validate(), cfg)) {
        values_ = VecX<T>::Zero(static_cast<Eigen::Index>(layout_.total));
        values_[layout_.s_log] = static_cast<T>(std::log(cfg_.init_s));
    }

    const FieldConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return layout_; }
    VecX<T>& values() { return values_; }
    const VecX<T>& values() const { return values_; }
    std::size_t size() const { return layout_.total; }

    MatMap block(const ParamLayout::Block& b) { return MatMap(values_.data() + b.offset, b.rows, b.cols); }
    ConstMatMap block(const ParamLayout::Block& b) const {
        return ConstMatMap(values_.data() + b.offset, b.rows, b.cols);
    }
    MatMap table(int level) { return block(layout_.tables[level]); }
    ConstMatMap table(int level) const { return block(layout_.tables[level]); }

    T s_log() const { return values_[layout_.s_log]; }
    T& s_log() { return values_[layout_.s_log]; }
    /// Sharpness of the SDF-to-transparency projection; positive by construction.
    T sharpness() const { return std::exp(s_log()); }

    VecX<T> zero_gradient() const { return VecX<T>::Zero(values_.size()); }

    template <typename U> FieldParams<U> cast() const {
        FieldParams<U> out(cfg_);
        out.values() = values_.template cast<U>();
        return out;
    }

private:
    FieldConfig cfg_;
    ParamLayout layout_;
    VecX<T> values_;
};

/// Random initialization: tiny uniform hash features, He-style MLP weights,
/// and an SDF head output bias that starts the field near a sphere. A
/// subsequent regression (see geometric_init.hpp) tightens the sphere fit.
template <typename T> void init_random(FieldParams<T>& params, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x1417));
    const auto& lay = params.layout();
    auto& v = params.values();
    for (std::size_t i = 0; i < lay.tables_end; ++i) v[i] = static_cast<T>(uniform(rng, -1e-4, 1e-4));

    auto he = [&](const ParamLayout::Block& b, double gain) {
        const double stddev = gain * std::sqrt(2.0 / double(b.cols));
        for (std::size_t i = 0; i < b.size(); ++i) v[b.offset + i] = static_cast<T>(stddev * normal01(rng));
    };
    const auto& cfg = params.config();
    he(lay.sdf_w1, 1.0);
    // hash feature columns start at zero so the initial field is driven by position
    for (int c = 0; c < cfg.grid.encoding_dim(); ++c)
        params.block(lay.sdf_w1).col(c).setZero();
    he(lay.sdf_w2, 1.0);
    he(lay.sdf_w3, 0.5);
    he(lay.col_w1, 1.0);
    he(lay.col_w2, 1.0);
    he(lay.col_w3, 1.0);
    params.values()[lay.s_log] = static_cast<T>(std::log(cfg.init_s));
}

} // namespace nsr
