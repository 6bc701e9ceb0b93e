#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>

#include "nsr/common.hpp"

namespace nsr {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-15;

    void validate() const {
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorCode::config, "adam: betas must be in [0, 1)");
        require(epsilon > 0, ErrorCode::config, "adam: epsilon must be > 0");
    }
};

template <typename T> struct AdamState {
    VecX<T> m;  // first moment
    VecX<T> v;  // second moment
    std::uint64_t step = 0;

    explicit AdamState(std::size_t size = 0) : m(VecX<T>::Zero(Eigen::Index(size))), v(VecX<T>::Zero(Eigen::Index(size))) {}
};

/// One bias-corrected Adam update. A non-finite gradient aborts the step
/// with a non_finite error before anything is modified.
template <typename T>
void adam_step(std::type_identity_t<Eigen::Ref<VecX<T>>> params, const std::type_identity_t<Eigen::Ref<const VecX<T>>>& grad,
               AdamState<T>& state, double lr, const AdamConfig& cfg = {}) {
    require(grad.size() == params.size() && state.m.size() == params.size() && state.v.size() == params.size(),
            ErrorCode::contract, "adam_step: size mismatch");
    require(lr > 0 && std::isfinite(lr), ErrorCode::contract, "adam_step: learning rate must be positive");
    require(grad.allFinite(), ErrorCode::non_finite, "adam_step: non-finite gradient");
    const std::uint64_t t = state.step + 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T step_size = T(lr / c1);
    const T inv_sqrt_c2 = T(1.0 / std::sqrt(c2));
    const T eps = T(cfg.epsilon);
    T* p = params.data();
    T* m = state.m.data();
    T* v = state.v.data();
    const T* g = grad.data();
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        // m / (1 - b1^t) / (sqrt(v / (1 - b2^t)) + eps)
        p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
    }
    state.step = t;
}

} // namespace nsr
