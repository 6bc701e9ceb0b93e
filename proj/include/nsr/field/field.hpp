#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/field/hash_grid.hpp"
#include "nsr/field/params.hpp"

namespace nsr {

/// Everything the SDF head's backward pass needs from one batched forward
/// evaluation. Columns are points.
template <typename T> struct SdfTape {
    bool recorded = false;
    bool with_gradient = false;
    LevelMask mask;
    Mat<T> positions;                    // 3 x B, unit cube
    std::vector<std::uint32_t> entries;  // (L*8) x B, column-major
    Mat<T> weights;                      // (L*8) x B
    Mat<T> dweights;                     // (L*8*3) x B
    Mat<T> z0;                           // encoder output + centered position
    Mat<T> a1, s1, y1, a2, s2, y2, out;  // s = sigmoid(beta * a) = softplus'
    Mat<T> d1, d2, gy1, gz0;             // reverse pass for d sdf / d z0
    Mat<T> gradient;                     // 3 x B, d sdf / d position

    Eigen::Index batch() const { return positions.cols(); }
    auto sdf() const { return out.row(0); }
    auto geometry() const { return out.bottomRows(out.rows() - 1); }
};

template <typename T> struct ColorTape {
    bool recorded = false;
    Mat<T> input;  // [geo; 2x-1; view; normal]
    Mat<T> a1, y1, a2, y2, rgb;
    Mat<T> normal;  // unit normals fed to the head
    RowX<T> grad_norm;
};

/// Recorded forward pass of the whole field for a batch of points.
template <typename T> struct FieldTape {
    SdfTape<T> sdf;
    ColorTape<T> color;
    bool recorded() const { return sdf.recorded && color.recorded; }
};

namespace field_detail {

template <typename T> T softplus(T x, T beta) {
    const T z = beta * x;
    return (std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)))) / beta;
}

constexpr double kNormalEps = 1e-12;

/// y = softplus_beta(a) and s = sigmoid(beta a) = dy/da, elementwise, from
/// one shared exp(-|beta a|).
template <typename T> void softplus_and_slope(const Mat<T>& a, T beta, Mat<T>& y, Mat<T>& s) {
    const auto z = (beta * a.array()).eval();
    const auto e = (-z.abs()).exp().eval();
    const auto inv = (T(1) + e).inverse().eval();
    s = (z >= T(0)).select(inv, e * inv).matrix();
    y = ((z.max(T(0)) + e.log1p()) / beta).matrix();
}

} // namespace field_detail

/// Hash encoding plus centered position for every column of `positions`;
/// fills the encoder part of `tape`.
template <typename T>
void encode_batch(const FieldParams<T>& params, LevelMask mask, const Mat<T>& positions, SdfTape<T>& tape) {
    const auto& cfg = params.config();
    const int levels = cfg.grid.num_levels;
    const int d = cfg.grid.features_per_level;
    const Eigen::Index batch = positions.cols();
    tape.mask = mask;
    tape.positions = positions;
    tape.entries.assign(std::size_t(levels) * 8 * std::size_t(batch), 0u);
    tape.weights.setZero(levels * 8, batch);
    tape.dweights.setZero(levels * 24, batch);
    tape.z0.setZero(cfg.sdf_input_dim(), batch);

    const int active = std::min(levels, mask.active_levels);
    std::vector<LevelGeometry> geo(std::size_t(std::max(active, 0)));
    std::vector<const T*> tables(geo.size());
    for (int l = 0; l < active; ++l) {
        geo[std::size_t(l)] = LevelGeometry(cfg.grid, l);
        tables[std::size_t(l)] = params.table(l).data();
    }

    for (Eigen::Index b = 0; b < batch; ++b) {
        const Vec3<T> p = positions.col(b);
        std::uint32_t* entries = tape.entries.data() + std::size_t(b) * levels * 8;
        T* weights = tape.weights.col(b).data();
        T* dweights = tape.dweights.col(b).data();
        T* z = tape.z0.col(b).data();
        for (int l = 0; l < active; ++l) {
            const auto corners = voxel_corners<T>(geo[std::size_t(l)], p);
            const T* table = tables[std::size_t(l)];
            T* zl = z + l * d;
            for (int c = 0; c < 8; ++c) {
                const int row = l * 8 + c;
                const std::uint32_t e = corners.entry[c];
                const T w = corners.weight[c];
                entries[row] = e;
                weights[row] = w;
                for (int a = 0; a < 3; ++a) dweights[row * 3 + a] = corners.dweight[c][a];
                const T* feature = table + std::size_t(e) * d;
                for (int k = 0; k < d; ++k) zl[k] += w * feature[k];
            }
        }
        for (int a = 0; a < 3; ++a) z[levels * d + a] = T(2) * p[a] - T(1);
    }
}

/// Batched SDF head forward. With `with_gradient` also computes the exact
/// position gradient of the sdf output (needed for normals and the Eikonal term).
template <typename T>
void sdf_forward(const FieldParams<T>& params, LevelMask mask, const Mat<T>& positions, SdfTape<T>& tape,
                 bool with_gradient) {
    const auto& cfg = params.config();
    const auto& lay = params.layout();
    const T beta = static_cast<T>(cfg.softplus_beta);
    encode_batch(params, mask, positions, tape);

    const auto w1 = params.block(lay.sdf_w1);
    const auto w2 = params.block(lay.sdf_w2);
    const auto w3 = params.block(lay.sdf_w3);
    const auto b1 = params.block(lay.sdf_b1).col(0);
    const auto b2 = params.block(lay.sdf_b2).col(0);
    const auto b3 = params.block(lay.sdf_b3).col(0);

    auto activate = [beta](const Mat<T>& a, Mat<T>& s, Mat<T>& y) { field_detail::softplus_and_slope(a, beta, y, s); };

    tape.a1.noalias() = w1 * tape.z0;
    tape.a1.colwise() += b1;
    activate(tape.a1, tape.s1, tape.y1);
    tape.a2.noalias() = w2 * tape.y1;
    tape.a2.colwise() += b2;
    activate(tape.a2, tape.s2, tape.y2);
    tape.out.noalias() = w3 * tape.y2;
    tape.out.colwise() += b3;

    tape.with_gradient = with_gradient;
    if (with_gradient) {
        const VecX<T> w3_sdf = w3.row(0).transpose();
        tape.d2 = tape.s2.array().colwise() * w3_sdf.array();
        tape.gy1.noalias() = w2.transpose() * tape.d2;
        tape.d1 = tape.s1.cwiseProduct(tape.gy1);
        tape.gz0.noalias() = w1.transpose() * tape.d1;

        const int levels = cfg.grid.num_levels;
        const int d = cfg.grid.features_per_level;
        const Eigen::Index batch = positions.cols();
        tape.gradient.resize(3, batch);
        const int active = std::min(levels, mask.active_levels);
        for (Eigen::Index b = 0; b < batch; ++b) {
            const T* gz = tape.gz0.col(b).data();
            const std::uint32_t* entries = tape.entries.data() + std::size_t(b) * levels * 8;
            const T* dweights = tape.dweights.col(b).data();
            T g[3] = {T(2) * gz[levels * d], T(2) * gz[levels * d + 1], T(2) * gz[levels * d + 2]};
            for (int l = 0; l < active; ++l) {
                const T* table = params.table(l).data();
                const T* upstream = gz + l * d;
                for (int c = 0; c < 8; ++c) {
                    const int row = l * 8 + c;
                    const T* feature = table + std::size_t(entries[row]) * d;
                    T s = 0;
                    for (int k = 0; k < d; ++k) s += feature[k] * upstream[k];
                    for (int a = 0; a < 3; ++a) g[a] += s * dweights[row * 3 + a];
                }
            }
            tape.gradient.col(b) = Vec3<T>(g[0], g[1], g[2]);
        }
    } else {
        tape.gradient.resize(0, 0);
    }
    tape.recorded = true;
}

/// Batched color head forward. `view` holds unit directions; normals are the
/// normalized SDF gradients from `sdf` (which must have been run with gradients).
template <typename T>
void color_forward(const FieldParams<T>& params, const SdfTape<T>& sdf, const Mat<T>& view, ColorTape<T>& tape) {
    require(sdf.recorded && sdf.with_gradient, ErrorCode::contract,
            "color_forward needs an SDF forward pass recorded with gradients");
    const auto& cfg = params.config();
    const auto& lay = params.layout();
    const Eigen::Index batch = sdf.batch();
    const int g = cfg.geo_features;

    tape.grad_norm = sdf.gradient.colwise().norm();
    tape.normal.resize(3, batch);
    for (Eigen::Index b = 0; b < batch; ++b)
        tape.normal.col(b) = sdf.gradient.col(b) / std::max(tape.grad_norm[b], T(field_detail::kNormalEps));

    tape.input.resize(cfg.color_input_dim(), batch);
    tape.input.topRows(g) = sdf.geometry();
    tape.input.middleRows(g, 3) = T(2) * sdf.positions.array() - T(1);
    tape.input.middleRows(g + 3, 3) = view;
    tape.input.middleRows(g + 6, 3) = tape.normal;

    tape.a1.noalias() = params.block(lay.col_w1) * tape.input;
    tape.a1.colwise() += params.block(lay.col_b1).col(0);
    tape.y1 = tape.a1.cwiseMax(T(0));
    tape.a2.noalias() = params.block(lay.col_w2) * tape.y1;
    tape.a2.colwise() += params.block(lay.col_b2).col(0);
    tape.y2 = tape.a2.cwiseMax(T(0));
    tape.rgb.noalias() = params.block(lay.col_w3) * tape.y2;
    tape.rgb.colwise() += params.block(lay.col_b3).col(0);
    tape.rgb = tape.rgb.unaryExpr([](T x) { return sigmoid(x); });
    tape.recorded = true;
}

template <typename T>
void field_forward(const FieldParams<T>& params, LevelMask mask, const Mat<T>& positions, const Mat<T>& view,
                   FieldTape<T>& tape) {
    sdf_forward(params, mask, positions, tape.sdf, true);
    color_forward(params, tape.sdf, view, tape.color);
}

/// Accumulates parameter gradients of the color head into `grad` and returns
/// the gradient with respect to the head's input matrix.
template <typename T>
Mat<T> color_backward(const FieldParams<T>& params, const ColorTape<T>& tape, const Mat<T>& d_rgb, VecX<T>& grad) {
    require(tape.recorded, ErrorCode::contract, "color_backward called without a recorded forward pass");
    const auto& lay = params.layout();
    using Map = Eigen::Map<Mat<T>>;
    auto gmap = [&](const ParamLayout::Block& b) { return Map(grad.data() + b.offset, b.rows, b.cols); };

    const Mat<T> d_out = d_rgb.cwiseProduct(tape.rgb.cwiseProduct((Mat<T>::Ones(3, tape.rgb.cols()) - tape.rgb)));
    gmap(lay.col_w3).noalias() += d_out * tape.y2.transpose();
    gmap(lay.col_b3).col(0) += d_out.rowwise().sum();
    Mat<T> d_a2 = params.block(lay.col_w3).transpose() * d_out;
    d_a2 = (tape.a2.array() > T(0)).select(d_a2.array(), T(0)).matrix();
    gmap(lay.col_w2).noalias() += d_a2 * tape.y1.transpose();
    gmap(lay.col_b2).col(0) += d_a2.rowwise().sum();
    Mat<T> d_a1 = params.block(lay.col_w2).transpose() * d_a2;
    d_a1 = (tape.a1.array() > T(0)).select(d_a1.array(), T(0)).matrix();
    gmap(lay.col_w1).noalias() += d_a1 * tape.input.transpose();
    gmap(lay.col_b1).col(0) += d_a1.rowwise().sum();
    return params.block(lay.col_w1).transpose() * d_a1;
}

/// Reverse pass of the SDF head for a loss that depends on the sdf value,
/// the geometry features and the position gradient of the sdf:
///   dL/dtheta = sum_b d_sdf_b dsdf_b/dtheta + d_geo_b . dgeo_b/dtheta + d_grad_b . dgrad_b/dtheta.
/// The gradient term is handled by propagating the tangent (direction
/// d_grad_b) through the network and reverse-differentiating that forward-mode
/// pass, which gives exact second-order contributions for the MLP and, within
/// each voxel, for the trilinear encoding.
template <typename T>
void sdf_backward(const FieldParams<T>& params, const SdfTape<T>& tape, const RowX<T>& d_sdf, const Mat<T>& d_geo,
                  const Mat<T>& d_grad, VecX<T>& grad) {
    require(tape.recorded, ErrorCode::contract, "sdf_backward called without a recorded forward pass");
    const auto& cfg = params.config();
    const auto& lay = params.layout();
    const Eigen::Index batch = tape.batch();
    const bool second_order = d_grad.size() > 0;
    require(!second_order || tape.with_gradient, ErrorCode::contract,
            "sdf_backward: gradient upstream requires a forward pass recorded with gradients");
    const T beta = static_cast<T>(cfg.softplus_beta);
    const int levels = cfg.grid.num_levels;
    const int d = cfg.grid.features_per_level;
    const int active = std::min(levels, tape.mask.active_levels);

    using Map = Eigen::Map<Mat<T>>;
    auto gmap = [&](const ParamLayout::Block& b) { return Map(grad.data() + b.offset, b.rows, b.cols); };
    const auto w1 = params.block(lay.sdf_w1);
    const auto w2 = params.block(lay.sdf_w2);
    const auto w3 = params.block(lay.sdf_w3);

    Mat<T> d_out(cfg.sdf_output_dim(), batch);
    d_out.row(0) = d_sdf;
    if (cfg.geo_features > 0) {
        if (d_geo.size() > 0)
            d_out.bottomRows(cfg.geo_features) = d_geo;
        else
            d_out.bottomRows(cfg.geo_features).setZero();
    }

    gmap(lay.sdf_w3).noalias() += d_out * tape.y2.transpose();
    gmap(lay.sdf_b3).col(0) += d_out.rowwise().sum();
    Mat<T> d_a2 = (w3.transpose() * d_out).cwiseProduct(tape.s2);

    Mat<T> tz0, ta1, ty1, ta2, ty2;
    if (second_order) {
        // tangent inputs: encoder Jacobian applied to d_grad
        tz0.setZero(cfg.sdf_input_dim(), batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            const T* q = d_grad.col(b).data();
            const std::uint32_t* entries = tape.entries.data() + std::size_t(b) * levels * 8;
            const T* dweights = tape.dweights.col(b).data();
            T* t = tz0.col(b).data();
            for (int l = 0; l < active; ++l) {
                const T* table = params.table(l).data();
                for (int c = 0; c < 8; ++c) {
                    const int row = l * 8 + c;
                    const T* dwr = dweights + row * 3;
                    const T dw = dwr[0] * q[0] + dwr[1] * q[1] + dwr[2] * q[2];
                    const T* feature = table + std::size_t(entries[row]) * d;
                    for (int k = 0; k < d; ++k) t[l * d + k] += dw * feature[k];
                }
            }
            for (int a = 0; a < 3; ++a) t[levels * d + a] = T(2) * q[a];
        }
        ta1.noalias() = w1 * tz0;
        ty1 = ta1.cwiseProduct(tape.s1);
        ta2.noalias() = w2 * ty1;
        ty2 = ta2.cwiseProduct(tape.s2);

        gmap(lay.sdf_w3).row(0) += ty2.rowwise().sum().transpose();
        const VecX<T> w3_sdf = w3.row(0).transpose();
        // d/da2 of s2 * ta2 . w3_sdf
        const auto curv2 = (beta * tape.s2.array() * (T(1) - tape.s2.array())).eval();
        d_a2.array() += (curv2 * ta2.array()).colwise() * w3_sdf.array();
    }

    gmap(lay.sdf_w2).noalias() += d_a2 * tape.y1.transpose();
    if (second_order) gmap(lay.sdf_w2).noalias() += tape.d2 * ty1.transpose();
    gmap(lay.sdf_b2).col(0) += d_a2.rowwise().sum();
    Mat<T> d_a1 = (w2.transpose() * d_a2).cwiseProduct(tape.s1);
    if (second_order) {
        d_a1.array() += beta * tape.s1.array() * (T(1) - tape.s1.array()) * ta1.array() * tape.gy1.array();
    }
    gmap(lay.sdf_w1).noalias() += d_a1 * tape.z0.transpose();
    if (second_order) gmap(lay.sdf_w1).noalias() += tape.d1 * tz0.transpose();
    gmap(lay.sdf_b1).col(0) += d_a1.rowwise().sum();
    const Mat<T> d_z0 = w1.transpose() * d_a1;

    for (Eigen::Index b = 0; b < batch; ++b) {
        const T zero[3] = {0, 0, 0};
        const T* q = second_order ? d_grad.col(b).data() : zero;
        const std::uint32_t* entries = tape.entries.data() + std::size_t(b) * levels * 8;
        const T* weights = tape.weights.col(b).data();
        const T* dweights = tape.dweights.col(b).data();
        const T* up = d_z0.col(b).data();
        const T* gz = second_order ? tape.gz0.col(b).data() : nullptr;
        for (int l = 0; l < active; ++l) {
            T* table_grad = grad.data() + lay.tables[std::size_t(l)].offset;
            for (int c = 0; c < 8; ++c) {
                const int row = l * 8 + c;
                T* g = table_grad + std::size_t(entries[row]) * d;
                const T w = weights[row];
                if (second_order) {
                    const T* dwr = dweights + row * 3;
                    const T dw = dwr[0] * q[0] + dwr[1] * q[1] + dwr[2] * q[2];
                    for (int k = 0; k < d; ++k) g[k] += w * up[l * d + k] + dw * gz[l * d + k];
                } else {
                    for (int k = 0; k < d; ++k) g[k] += w * up[l * d + k];
                }
            }
        }
    }
}

/// Backward pass through the whole field given upstream gradients for the
/// sdf values, the sdf position gradients and the colors. Accumulates into `grad`.
template <typename T>
void field_backward(const FieldParams<T>& params, const FieldTape<T>& tape, const RowX<T>& d_sdf,
                    const Mat<T>& d_grad, const Mat<T>& d_rgb, VecX<T>& grad) {
    require(tape.recorded(), ErrorCode::contract, "field_backward called without a recorded forward pass");
    const auto& cfg = params.config();
    const int g = cfg.geo_features;
    const Mat<T> d_in = color_backward(params, tape.color, d_rgb, grad);
    Mat<T> d_gradient = d_grad;
    const Eigen::Index batch = tape.sdf.batch();
    for (Eigen::Index b = 0; b < batch; ++b) {
        const T norm = std::max(tape.color.grad_norm[b], T(field_detail::kNormalEps));
        const Vec3<T> n = tape.color.normal.col(b);
        const Vec3<T> dn = d_in.template block<3, 1>(g + 6, b);
        // d(g/|g|)/dg = (I - n n^T) / |g|
        d_gradient.col(b) += (dn - n * n.dot(dn)) / norm;
    }
    const Mat<T> d_geo = d_in.topRows(g);
    sdf_backward(params, tape.sdf, d_sdf, d_geo, d_gradient, grad);
}

// Single-point conveniences.

template <typename T> VecX<T> encode(const FieldParams<T>& params, const Vec3<T>& p, LevelMask mask) {
    SdfTape<T> tape;
    encode_batch(params, mask, Mat<T>(p), tape);
    return tape.z0.col(0).head(params.config().grid.encoding_dim());
}

template <typename T> struct SdfEval {
    T value;
    Vec3<T> gradient;
    VecX<T> geometry;
};

template <typename T> SdfEval<T> eval_sdf(const FieldParams<T>& params, const Vec3<T>& p, LevelMask mask) {
    SdfTape<T> tape;
    sdf_forward(params, mask, Mat<T>(p), tape, true);
    return {tape.out(0, 0), tape.gradient.col(0), tape.out.col(0).tail(params.config().geo_features)};
}

/// Color head alone, with an explicit normal rather than one derived from the SDF.
template <typename T>
Vec3<T> eval_color(const FieldParams<T>& params, const Vec3<T>& p, const Vec3<T>& view, const Vec3<T>& normal,
                   const VecX<T>& geometry) {
    const auto& lay = params.layout();
    const int g = params.config().geo_features;
    VecX<T> in(params.config().color_input_dim());
    in.head(g) = geometry;
    in.segment(g, 3) = T(2) * p - Vec3<T>::Ones();
    in.segment(g + 3, 3) = view;
    in.segment(g + 6, 3) = normal;
    const auto relu = [](T x) { return x > T(0) ? x : T(0); };
    VecX<T> h1 = (params.block(lay.col_w1) * in + params.block(lay.col_b1).col(0)).unaryExpr(relu);
    VecX<T> h2 = (params.block(lay.col_w2) * h1 + params.block(lay.col_b2).col(0)).unaryExpr(relu);
    VecX<T> o = params.block(lay.col_w3) * h2 + params.block(lay.col_b3).col(0);
    return o.unaryExpr([](T x) { return sigmoid(x); });
}

} // namespace nsr
