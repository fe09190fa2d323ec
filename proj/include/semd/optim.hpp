#pragma once

#include <cmath>
#include <string>

#include "semd/tensor.hpp"

namespace semd {

/// Adam with bias correction. Defaults follow the usual beta1=0.9,
/// beta2=0.999, eps=1e-8 convention.
template <typename T>
struct AdamState {
    Tensor<T> m;
    Tensor<T> v;
    long t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(const Shape& param_shape, double lr_) : m(param_shape), v(param_shape), lr(lr_) {}
};

template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
                 const std::string& param_name = "param") {
    require(param.shape() == grad.shape(),
            "adam_update: gradient shape " + shape_str(grad.shape()) + " != parameter shape " +
                shape_str(param.shape()) + " for " + param_name);
    require(state.m.shape() == param.shape() && state.v.shape() == param.shape(),
            "adam_update: moment shapes do not match parameter " + param_name);
    if (!grad.all_finite())
        throw std::runtime_error("adam_update: non-finite gradient for parameter " + param_name);
    state.t += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double g = static_cast<double>(grad[i]);
        const double m = b1 * static_cast<double>(state.m[i]) + (1.0 - b1) * g;
        const double v = b2 * static_cast<double>(state.v[i]) + (1.0 - b2) * g * g;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        param[i] = static_cast<T>(static_cast<double>(param[i]) -
                                  state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
}

/// Rescales each slice weights[i, ...] (all axes but the first flattened)
/// whose L2 norm exceeds c back onto the norm-c sphere. Slices within the
/// bound are left untouched, so the projection is idempotent.
template <typename T>
void max_norm_project(Tensor<T>& weights, double c) {
    require(c > 0, "max_norm_project: c must be > 0");
    require(weights.ndim() >= 1, "max_norm_project: scalar tensor has no slices");
    const int n_slices = weights.dim(0);
    if (n_slices == 0) return;
    const std::size_t slice = weights.numel() / static_cast<std::size_t>(n_slices);
    for (int s = 0; s < n_slices; ++s) {
        T* p = weights.data() + static_cast<std::size_t>(s) * slice;
        double ssq = 0;
        for (std::size_t i = 0; i < slice; ++i) ssq += static_cast<double>(p[i]) * p[i];
        const double norm = std::sqrt(ssq);
        // relative slack so a slice already sitting on the bound is not
        // rescaled again by a rounding-level factor
        if (norm * (1.0 - 1e-13) > c) {
            const T scale = static_cast<T>(c / norm);
            for (std::size_t i = 0; i < slice; ++i) p[i] *= scale;
        }
    }
}

}  // namespace semd
