#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace semd {

// ---------------------------------------------------------------------------
// Architecture configuration. Defaults give the EEGNet-8,2 stack on 27
// channels x 2000 samples with SE ranking layers at every stage.

struct ArchConfig {
    int n_channels = 27;
    int n_samples = 2000;
    int f1 = 8;          // temporal filters
    int depth_mult = 2;  // spatial depth multiplier: f1 * depth_mult maps after conv2
    int f2 = 16;         // separable-stage output filters
    int k_temporal = 250;
    int k_separable = 16;
    int pool1 = 4;
    int pool2 = 8;
    double dropout_p = 0.25;
    int reduction = 3;  // SE bottleneck divisor

    bool se_input = true;       // electrode ranking on the raw epoch
    bool se_post_conv1 = true;  // electrode ranking per temporal feature map
    bool se_map1 = true;        // feature-map ranking after conv1
    bool se_map2 = true;        // feature-map ranking after conv2 block
    bool se_map3 = true;        // feature-map ranking after conv3 block

    double bn_eps = 1e-5;
    double bn_momentum = 0.01;     // running = (1-m)*running + m*batch
    double maxnorm_spatial = 1.0;  // L2 cap per conv2 kernel
    double maxnorm_dense = 0.25;   // L2 cap per classifier row

    int spatial_maps() const { return f1 * depth_mult; }
    int hidden(int n) const { return std::max(1, n / reduction); }
    int t_after_pool1() const { return n_samples / pool1; }
    int t_after_pool2() const { return t_after_pool1() / pool2; }
    int d_flat() const { return f2 * t_after_pool2(); }
    // same-length temporal padding; even kernels pad one more on the right
    int pad_t_left(int k) const { return (k - 1) / 2; }
    int pad_t_right(int k) const { return k / 2; }

    void set_all_se(bool on) { se_input = se_post_conv1 = se_map1 = se_map2 = se_map3 = on; }
    bool any_se() const { return se_input || se_post_conv1 || se_map1 || se_map2 || se_map3; }
};

inline void validate_arch(const ArchConfig& c) {
    require(c.n_channels >= 2, "n_channels must be >= 2, got " + std::to_string(c.n_channels));
    require(c.n_samples >= 1, "n_samples must be >= 1");
    require(c.f1 >= 1 && c.depth_mult >= 1 && c.f2 >= 1, "filter counts must be >= 1");
    require(c.k_temporal >= 1 && c.k_separable >= 1, "kernel widths must be >= 1");
    require(c.pool1 >= 1 && c.pool2 >= 1, "pool widths must be >= 1");
    require(c.t_after_pool2() >= 1, "pooling (" + std::to_string(c.pool1) + ", " +
                                        std::to_string(c.pool2) + ") consumes the whole time axis of " +
                                        std::to_string(c.n_samples) + " samples");
    require(c.dropout_p >= 0.0 && c.dropout_p < 1.0, "dropout_p must lie in [0,1)");
    require(c.reduction >= 1, "reduction must be >= 1");
    require(c.bn_eps > 0 && c.bn_momentum >= 0 && c.bn_momentum <= 1, "bad batch-norm constants");
    require(c.maxnorm_spatial > 0 && c.maxnorm_dense > 0, "max-norm caps must be positive");
}

// ---------------------------------------------------------------------------
// Parameters.

/// Bias-free SE gate weights: w1 [hidden, n], w2 [n, hidden].
template <typename T>
struct SeWeights {
    Tensor<T> w1;
    Tensor<T> w2;
};

using ElectrodeSE = SeWeights<float>;
using FeatureMapSE = SeWeights<float>;

template <typename T>
struct BnParams {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
};

template <typename T>
struct ModelState {
    ArchConfig cfg;
    SeWeights<T> se_in;    // electrode ranking on the input epoch
    Tensor<T> conv1_w;     // [f1, 1, 1, k_temporal]
    BnParams<T> bn1;
    SeWeights<T> se_post;  // electrode ranking per temporal map (weights shared across maps)
    SeWeights<T> se_map1;  // feature-map ranking, n = f1
    Tensor<T> conv2_w;     // [f1*depth_mult, 1, n_channels, 1], groups = f1
    BnParams<T> bn2;
    SeWeights<T> se_map2;  // n = f1*depth_mult
    Tensor<T> conv3_dw;    // [f1*depth_mult, 1, 1, k_separable], groups = f1*depth_mult
    Tensor<T> conv3_pw;    // [f2, f1*depth_mult, 1, 1]
    BnParams<T> bn3;
    SeWeights<T> se_map3;  // n = f2
    Tensor<T> fc_w;        // [2, d_flat]
    Tensor<T> fc_b;        // [2]
};

/// Visits every trainable parameter in the fixed serialization order. M is
/// ModelState<T> (possibly const); the same order is the checkpoint layout
/// and the optimizer slot order.
template <typename M, typename F>
void for_each_param(M& m, F&& f) {
    f("se_in.w1", m.se_in.w1);
    f("se_in.w2", m.se_in.w2);
    f("conv1.w", m.conv1_w);
    f("bn1.gamma", m.bn1.gamma);
    f("bn1.beta", m.bn1.beta);
    f("se_post.w1", m.se_post.w1);
    f("se_post.w2", m.se_post.w2);
    f("se_map1.w1", m.se_map1.w1);
    f("se_map1.w2", m.se_map1.w2);
    f("conv2.w", m.conv2_w);
    f("bn2.gamma", m.bn2.gamma);
    f("bn2.beta", m.bn2.beta);
    f("se_map2.w1", m.se_map2.w1);
    f("se_map2.w2", m.se_map2.w2);
    f("conv3.dw", m.conv3_dw);
    f("conv3.pw", m.conv3_pw);
    f("bn3.gamma", m.bn3.gamma);
    f("bn3.beta", m.bn3.beta);
    f("se_map3.w1", m.se_map3.w1);
    f("se_map3.w2", m.se_map3.w2);
    f("fc.w", m.fc_w);
    f("fc.b", m.fc_b);
}

/// Non-trained state carried with the model (batch-norm running statistics).
template <typename M, typename F>
void for_each_buffer(M& m, F&& f) {
    f("bn1.running_mean", m.bn1.running_mean);
    f("bn1.running_var", m.bn1.running_var);
    f("bn2.running_mean", m.bn2.running_mean);
    f("bn2.running_var", m.bn2.running_var);
    f("bn3.running_mean", m.bn3.running_mean);
    f("bn3.running_var", m.bn3.running_var);
}

template <typename T>
std::size_t param_count(const ModelState<T>& m) {
    std::size_t n = 0;
    for_each_param(m, [&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
}

/// Same shapes, all values zero; used as a gradient accumulator.
template <typename T>
ModelState<T> zeros_like(const ModelState<T>& m) {
    ModelState<T> z;
    z.cfg = m.cfg;
    std::vector<Tensor<T>*> dst;
    std::vector<const Tensor<T>*> src;
    for_each_param(z, [&](const std::string&, Tensor<T>& t) { dst.push_back(&t); });
    for_each_param(m, [&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    for_each_buffer(z, [&](const std::string&, Tensor<T>& t) { dst.push_back(&t); });
    for_each_buffer(m, [&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = Tensor<T>(src[i]->shape());
    return z;
}

/// All tensors at their configured shapes: weights zero, BN gamma/variance
/// one. Checkpoint loading fills these in place.
template <typename T>
ModelState<T> allocate_model(const ArchConfig& cfg) {
    validate_arch(cfg);
    const int nc = cfg.n_channels;
    const int hc = cfg.hidden(nc);
    const int f1 = cfg.f1, fm = cfg.spatial_maps(), f2 = cfg.f2;

    ModelState<T> m;
    m.cfg = cfg;
    m.se_in.w1 = Tensor<T>({hc, nc});
    m.se_in.w2 = Tensor<T>({nc, hc});
    m.conv1_w = Tensor<T>({f1, 1, 1, cfg.k_temporal});
    m.se_post.w1 = Tensor<T>({hc, nc});
    m.se_post.w2 = Tensor<T>({nc, hc});
    m.se_map1.w1 = Tensor<T>({cfg.hidden(f1), f1});
    m.se_map1.w2 = Tensor<T>({f1, cfg.hidden(f1)});
    m.conv2_w = Tensor<T>({fm, 1, nc, 1});
    m.se_map2.w1 = Tensor<T>({cfg.hidden(fm), fm});
    m.se_map2.w2 = Tensor<T>({fm, cfg.hidden(fm)});
    m.conv3_dw = Tensor<T>({fm, 1, 1, cfg.k_separable});
    m.conv3_pw = Tensor<T>({f2, fm, 1, 1});
    m.se_map3.w1 = Tensor<T>({cfg.hidden(f2), f2});
    m.se_map3.w2 = Tensor<T>({f2, cfg.hidden(f2)});
    m.fc_w = Tensor<T>({2, cfg.d_flat()});
    m.fc_b = Tensor<T>({2});
    for (BnParams<T>* bn : {&m.bn1, &m.bn2, &m.bn3}) {
        const int ch = bn == &m.bn1 ? f1 : (bn == &m.bn2 ? fm : f2);
        bn->gamma = Tensor<T>({ch}, T(1));
        bn->beta = Tensor<T>({ch});
        bn->running_mean = Tensor<T>({ch});
        bn->running_var = Tensor<T>({ch}, T(1));
    }
    return m;
}

/// Seeded Glorot initialization, parameters drawn in for_each_param order so
/// a seed pins every weight regardless of which SE stages are enabled.
template <typename T>
ModelState<T> build_model(const ArchConfig& cfg, Rng& rng) {
    ModelState<T> m = allocate_model<T>(cfg);
    const int nc = cfg.n_channels;
    const int hc = cfg.hidden(nc);
    const int f1 = cfg.f1, fm = cfg.spatial_maps(), f2 = cfg.f2;

    glorot_uniform(m.se_in.w1, nc, hc, rng);
    glorot_uniform(m.se_in.w2, hc, nc, rng);
    glorot_uniform(m.conv1_w, cfg.k_temporal, f1 * cfg.k_temporal, rng);
    glorot_uniform(m.se_post.w1, nc, hc, rng);
    glorot_uniform(m.se_post.w2, hc, nc, rng);
    glorot_uniform(m.se_map1.w1, f1, cfg.hidden(f1), rng);
    glorot_uniform(m.se_map1.w2, cfg.hidden(f1), f1, rng);
    glorot_uniform(m.conv2_w, nc, cfg.depth_mult * nc, rng);
    glorot_uniform(m.se_map2.w1, fm, cfg.hidden(fm), rng);
    glorot_uniform(m.se_map2.w2, cfg.hidden(fm), fm, rng);
    glorot_uniform(m.conv3_dw, cfg.k_separable, cfg.k_separable, rng);
    glorot_uniform(m.conv3_pw, fm, f2, rng);
    glorot_uniform(m.se_map3.w1, f2, cfg.hidden(f2), rng);
    glorot_uniform(m.se_map3.w2, cfg.hidden(f2), f2, rng);
    glorot_uniform(m.fc_w, cfg.d_flat(), 2, rng);
    // fc_b and bn beta stay zero
    return m;
}

template <typename T>
ModelState<T> build_model(const ArchConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return build_model<T>(cfg, rng);
}

// ---------------------------------------------------------------------------
// SE gate core, shared by the electrode and feature-map ranking layers:
// s = sigmoid(w2 . relu(w1 . z)), no biases, applied to each row of z.

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename T>
struct SeGateCtx {
    bool valid = false;
    Tensor<T> z;    // [rows, n] pooled descriptors
    Tensor<T> pre;  // [rows, hidden] pre-activation
    Tensor<T> h;    // [rows, hidden] after ReLU
    Tensor<T> s;    // [rows, n] gates
};

template <typename T>
Tensor<T> se_gate_forward(const Tensor<T>& z, const SeWeights<T>& w, SeGateCtx<T>* ctx = nullptr) {
    require(z.ndim() == 2, "se gate: z must be [rows, n], got " + shape_str(z.shape()));
    const int rows = z.dim(0), n = z.dim(1);
    require(w.w1.ndim() == 2 && w.w1.dim(1) == n,
            "se gate: w1 shape " + shape_str(w.w1.shape()) + " does not match descriptor width " +
                std::to_string(n));
    const int hidden = w.w1.dim(0);
    require(w.w2.shape() == Shape({n, hidden}),
            "se gate: w2 shape " + shape_str(w.w2.shape()) + " must be [" + std::to_string(n) + "," +
                std::to_string(hidden) + "]");

    Tensor<T> pre({rows, hidden});
    Tensor<T> h({rows, hidden});
    Tensor<T> s({rows, n});
    for (int r = 0; r < rows; ++r) {
        const T* zr = z.data() + static_cast<std::size_t>(r) * n;
        T* pr = pre.data() + static_cast<std::size_t>(r) * hidden;
        T* hr = h.data() + static_cast<std::size_t>(r) * hidden;
        T* sr = s.data() + static_cast<std::size_t>(r) * n;
        for (int j = 0; j < hidden; ++j) {
            pr[j] = detail::dotp(w.w1.data() + static_cast<std::size_t>(j) * n, zr, n);
            hr[j] = pr[j] > T(0) ? pr[j] : T(0);
        }
        for (int i = 0; i < n; ++i) {
            const T u = detail::dotp(w.w2.data() + static_cast<std::size_t>(i) * hidden, hr, hidden);
            sr[i] = static_cast<T>(sigmoid(static_cast<double>(u)));
        }
    }
    if (ctx) {
        ctx->valid = true;
        ctx->z = z;
        ctx->pre = std::move(pre);
        ctx->h = std::move(h);
        ctx->s = s;
    }
    return s;
}

template <typename T>
struct SeGateGrads {
    Tensor<T> dz;
    Tensor<T> dw1;
    Tensor<T> dw2;
};

template <typename T>
SeGateGrads<T> se_gate_backward(const Tensor<T>& ds, const SeWeights<T>& w, const SeGateCtx<T>& ctx) {
    if (!ctx.valid) throw std::runtime_error("se gate backward: missing forward context");
    require(ds.shape() == ctx.s.shape(), "se gate backward: cotangent shape mismatch");
    const int rows = ds.dim(0), n = ds.dim(1), hidden = ctx.pre.dim(1);

    SeGateGrads<T> g;
    g.dz = Tensor<T>({rows, n});
    g.dw1 = Tensor<T>(w.w1.shape());
    g.dw2 = Tensor<T>(w.w2.shape());
    std::vector<T> du(static_cast<std::size_t>(n));
    std::vector<T> dh(static_cast<std::size_t>(hidden));
    for (int r = 0; r < rows; ++r) {
        const std::size_t rn = static_cast<std::size_t>(r) * n;
        const std::size_t rh = static_cast<std::size_t>(r) * hidden;
        for (int i = 0; i < n; ++i) {
            const T s = ctx.s[rn + i];
            du[static_cast<std::size_t>(i)] = ds[rn + i] * s * (T(1) - s);
        }
        std::fill(dh.begin(), dh.end(), T(0));
        for (int i = 0; i < n; ++i) {
            const T d = du[static_cast<std::size_t>(i)];
            const T* w2r = w.w2.data() + static_cast<std::size_t>(i) * hidden;
            T* dw2r = g.dw2.data() + static_cast<std::size_t>(i) * hidden;
            for (int j = 0; j < hidden; ++j) {
                dw2r[j] += d * ctx.h[rh + j];
                dh[static_cast<std::size_t>(j)] += d * w2r[j];
            }
        }
        T* dzr = g.dz.data() + rn;
        for (int j = 0; j < hidden; ++j) {
            const T dpre = ctx.pre[rh + j] > T(0) ? dh[static_cast<std::size_t>(j)] : T(0);
            const T* w1r = w.w1.data() + static_cast<std::size_t>(j) * n;
            T* dw1r = g.dw1.data() + static_cast<std::size_t>(j) * n;
            for (int k = 0; k < n; ++k) {
                dw1r[k] += dpre * ctx.z[rn + k];
                dzr[k] += dpre * w1r[k];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Electrode SE on [B, F, C, T]: one gate per (batch, map) slice over the
// channel axis, pooled along time. The input-stage layer sees F == 1; the
// post-conv1 layer sees F == f1 with the same weights for every map.

template <typename T>
Tensor<T> electrode_se_forward_batch(const Tensor<T>& x, const SeWeights<T>& w,
                                     SeGateCtx<T>* ctx = nullptr) {
    require(x.ndim() == 4, "electrode se: input must be [B,F,C,T], got " + shape_str(x.shape()));
    const int b = x.dim(0), f = x.dim(1), c = x.dim(2), t = x.dim(3);
    require(t >= 1, "electrode se: empty time axis");
    const int rows = b * f;

    Tensor<T> z({rows, c});
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) {
            const T* row = x.data() + (static_cast<std::size_t>(r) * c + i) * t;
            double sum = 0;
            for (int j = 0; j < t; ++j) sum += static_cast<double>(row[j]);
            z.data()[static_cast<std::size_t>(r) * c + i] = static_cast<T>(sum / t);
        }

    const Tensor<T> s = se_gate_forward(z, w, ctx);
    Tensor<T> y(x.shape());
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) {
            const T g = s.data()[static_cast<std::size_t>(r) * c + i];
            const T* src = x.data() + (static_cast<std::size_t>(r) * c + i) * t;
            T* dst = y.data() + (static_cast<std::size_t>(r) * c + i) * t;
            for (int j = 0; j < t; ++j) dst[j] = g * src[j];
        }
    return y;
}

template <typename T>
Tensor<T> electrode_se_backward_batch(const Tensor<T>& cot, const Tensor<T>& x,
                                      const SeWeights<T>& w, const SeGateCtx<T>& ctx,
                                      Tensor<T>& dw1, Tensor<T>& dw2) {
    require(cot.shape() == x.shape(), "electrode se backward: cotangent shape mismatch");
    const int b = x.dim(0), f = x.dim(1), c = x.dim(2), t = x.dim(3);
    const int rows = b * f;

    Tensor<T> ds({rows, c});
    Tensor<T> dx(x.shape());
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) {
            const std::size_t off = (static_cast<std::size_t>(r) * c + i) * t;
            ds.data()[static_cast<std::size_t>(r) * c + i] =
                detail::dotp(cot.data() + off, x.data() + off, t);
            const T g = ctx.s.data()[static_cast<std::size_t>(r) * c + i];
            for (int j = 0; j < t; ++j) dx.data()[off + j] = g * cot.data()[off + j];
        }

    SeGateGrads<T> gg = se_gate_backward(ds, w, ctx);
    dw1 = std::move(gg.dw1);
    dw2 = std::move(gg.dw2);
    const T inv_t = T(1) / static_cast<T>(t);
    for (int r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) {
            const T dz = gg.dz.data()[static_cast<std::size_t>(r) * c + i] * inv_t;
            T* dst = dx.data() + (static_cast<std::size_t>(r) * c + i) * t;
            for (int j = 0; j < t; ++j) dst[j] += dz;
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Feature-map SE on [B, F, C, T]: one gate per batch row over the map axis,
// pooled along channels and time.

template <typename T>
Tensor<T> featuremap_se_forward_batch(const Tensor<T>& x, const SeWeights<T>& w,
                                      SeGateCtx<T>* ctx = nullptr) {
    require(x.ndim() == 4, "feature-map se: input must be [B,F,C,T], got " + shape_str(x.shape()));
    const int b = x.dim(0), f = x.dim(1), c = x.dim(2), t = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(c) * t;
    require(plane >= 1, "feature-map se: empty map");

    Tensor<T> z({b, f});
    for (int r = 0; r < b; ++r)
        for (int i = 0; i < f; ++i) {
            const T* map = x.data() + (static_cast<std::size_t>(r) * f + i) * plane;
            double sum = 0;
            for (std::size_t j = 0; j < plane; ++j) sum += static_cast<double>(map[j]);
            z.data()[static_cast<std::size_t>(r) * f + i] = static_cast<T>(sum / static_cast<double>(plane));
        }

    const Tensor<T> s = se_gate_forward(z, w, ctx);
    Tensor<T> y(x.shape());
    for (int r = 0; r < b; ++r)
        for (int i = 0; i < f; ++i) {
            const T g = s.data()[static_cast<std::size_t>(r) * f + i];
            const std::size_t off = (static_cast<std::size_t>(r) * f + i) * plane;
            for (std::size_t j = 0; j < plane; ++j) y.data()[off + j] = g * x.data()[off + j];
        }
    return y;
}

template <typename T>
Tensor<T> featuremap_se_backward_batch(const Tensor<T>& cot, const Tensor<T>& x,
                                       const SeWeights<T>& w, const SeGateCtx<T>& ctx,
                                       Tensor<T>& dw1, Tensor<T>& dw2) {
    require(cot.shape() == x.shape(), "feature-map se backward: cotangent shape mismatch");
    const int b = x.dim(0), f = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);

    Tensor<T> ds({b, f});
    Tensor<T> dx(x.shape());
    for (int r = 0; r < b; ++r)
        for (int i = 0; i < f; ++i) {
            const std::size_t off = (static_cast<std::size_t>(r) * f + i) * plane;
            ds.data()[static_cast<std::size_t>(r) * f + i] =
                detail::dotp(cot.data() + off, x.data() + off, static_cast<int>(plane));
            const T g = ctx.s.data()[static_cast<std::size_t>(r) * f + i];
            for (std::size_t j = 0; j < plane; ++j) dx.data()[off + j] = g * cot.data()[off + j];
        }

    SeGateGrads<T> gg = se_gate_backward(ds, w, ctx);
    dw1 = std::move(gg.dw1);
    dw2 = std::move(gg.dw2);
    const T inv = T(1) / static_cast<T>(plane);
    for (int r = 0; r < b; ++r)
        for (int i = 0; i < f; ++i) {
            const T dz = gg.dz.data()[static_cast<std::size_t>(r) * f + i] * inv;
            T* dst = dx.data() + (static_cast<std::size_t>(r) * f + i) * plane;
            for (std::size_t j = 0; j < plane; ++j) dst[j] += dz;
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Single-tensor entry points matching the ranking-layer equations directly.

template <typename T>
struct SeResult {
    Tensor<T> scaled;
    Tensor<T> ranks;
};

/// X [C,T] -> X_scaled [C,T] plus s_c [C].
template <typename T>
SeResult<T> electrode_se_forward(const Tensor<T>& x, const SeWeights<T>& layer) {
    require(x.ndim() == 2, "electrode_se_forward expects [channels, samples], got " + shape_str(x.shape()));
    SeGateCtx<T> ctx;
    const Tensor<T> y =
        electrode_se_forward_batch(x.reshaped({1, 1, x.dim(0), x.dim(1)}), layer, &ctx);
    return {y.reshaped(x.shape()), ctx.s.reshaped({x.dim(0)})};
}

/// Y [F,C,T] -> Y_scaled plus per-map s_c [F,C]; same weights for every map.
template <typename T>
SeResult<T> electrode_se_forward_per_map(const Tensor<T>& y, const SeWeights<T>& layer) {
    require(y.ndim() == 3, "electrode_se_forward_per_map expects [maps, channels, samples], got " +
                               shape_str(y.shape()));
    SeGateCtx<T> ctx;
    const Tensor<T> out =
        electrode_se_forward_batch(y.reshaped({1, y.dim(0), y.dim(1), y.dim(2)}), layer, &ctx);
    return {out.reshaped(y.shape()), ctx.s.reshaped({y.dim(0), y.dim(1)})};
}

/// Y [F,C,T] -> Y_scaled plus s_F [F].
template <typename T>
SeResult<T> featuremap_se_forward(const Tensor<T>& y, const SeWeights<T>& layer) {
    require(y.ndim() == 3,
            "featuremap_se_forward expects [maps, channels, samples], got " + shape_str(y.shape()));
    SeGateCtx<T> ctx;
    const Tensor<T> out =
        featuremap_se_forward_batch(y.reshaped({1, y.dim(0), y.dim(1), y.dim(2)}), layer, &ctx);
    return {out.reshaped(y.shape()), ctx.s.reshaped({y.dim(0)})};
}

// ---------------------------------------------------------------------------
// Full forward pass.
//
// Stage order: input electrode SE -> conv1 (temporal, same-length) -> BN ->
// post-conv1 electrode SE (per map) -> feature-map SE 1 -> conv2 (depthwise
// spatial, valid) -> BN -> ELU -> pool(pool1) -> dropout -> feature-map SE 2
// -> conv3 (separable temporal) -> BN -> ELU -> pool(pool2) -> dropout ->
// feature-map SE 3 -> flatten -> dense.

template <typename T>
struct Tape {
    bool valid = false;
    Tensor<T> x0;  // [B,1,C,T]
    SeGateCtx<T> se_in;
    Tensor<T> conv1_in;
    BatchNormCtx<T> bn1;
    Tensor<T> bn1_out;
    SeGateCtx<T> se_post;
    Tensor<T> se_post_out;
    SeGateCtx<T> se_map1;
    Tensor<T> conv2_in;
    BatchNormCtx<T> bn2;
    EluCtx<T> elu1;
    Shape pool1_in_shape;
    DropoutCtx<T> drop1;
    Tensor<T> drop1_out;
    SeGateCtx<T> se_map2;
    Tensor<T> conv3dw_in;
    Tensor<T> conv3pw_in;
    BatchNormCtx<T> bn3;
    EluCtx<T> elu2;
    Shape pool2_in_shape;
    DropoutCtx<T> drop2;
    Tensor<T> drop2_out;
    SeGateCtx<T> se_map3;
    Tensor<T> flat_in;  // [B, d_flat]
};

/// bn_mode selects batch statistics (kTrain, updates running stats) or frozen
/// running statistics (kInfer); dropout_mode enables/disables dropout
/// independently so fine-tuning can keep dropout active over frozen BN.
template <typename T>
Tensor<T> forward(ModelState<T>& m, const Tensor<T>& batch, Mode bn_mode, Mode dropout_mode,
                  Rng& rng, Tape<T>* tape = nullptr) {
    const ArchConfig& cfg = m.cfg;
    require(batch.ndim() == 3 && batch.dim(1) == cfg.n_channels && batch.dim(2) == cfg.n_samples,
            "forward: batch must be [B," + std::to_string(cfg.n_channels) + "," +
                std::to_string(cfg.n_samples) + "], got " + shape_str(batch.shape()));
    const int b = batch.dim(0);
    if (tape) *tape = Tape<T>{};

    auto check = [](const Tensor<T>& t, const char* stage) { require_finite(t, stage); };

    Tensor<T> a = batch.reshaped({b, 1, cfg.n_channels, cfg.n_samples});
    if (tape) tape->x0 = a;
    if (cfg.se_input) {
        a = electrode_se_forward_batch(a, m.se_in, tape ? &tape->se_in : nullptr);
        check(a, "se_in output");
    }

    if (tape) tape->conv1_in = a;
    a = conv2d_forward(a, m.conv1_w, 1, 0, cfg.pad_t_left(cfg.k_temporal), cfg.pad_t_right(cfg.k_temporal));
    check(a, "conv1 output");
    a = batch_norm_forward(a, m.bn1.gamma, m.bn1.beta, m.bn1.running_mean, m.bn1.running_var,
                           bn_mode, cfg.bn_momentum, cfg.bn_eps, tape ? &tape->bn1 : nullptr);
    check(a, "bn1 output");

    if (cfg.se_post_conv1) {
        if (tape) tape->bn1_out = a;
        a = electrode_se_forward_batch(a, m.se_post, tape ? &tape->se_post : nullptr);
        check(a, "se_post output");
    }
    if (cfg.se_map1) {
        if (tape) tape->se_post_out = a;
        a = featuremap_se_forward_batch(a, m.se_map1, tape ? &tape->se_map1 : nullptr);
        check(a, "se_map1 output");
    }

    if (tape) tape->conv2_in = a;
    a = conv2d_forward(a, m.conv2_w, cfg.f1, 0, 0, 0);
    check(a, "conv2 output");
    a = batch_norm_forward(a, m.bn2.gamma, m.bn2.beta, m.bn2.running_mean, m.bn2.running_var,
                           bn_mode, cfg.bn_momentum, cfg.bn_eps, tape ? &tape->bn2 : nullptr);
    check(a, "bn2 output");
    a = elu_forward(a, T(1), tape ? &tape->elu1 : nullptr);
    if (tape) tape->pool1_in_shape = a.shape();
    a = avg_pool_time_forward(a, cfg.pool1);
    check(a, "pool1 output");
    a = dropout_forward(a, cfg.dropout_p, rng, dropout_mode, tape ? &tape->drop1 : nullptr);

    if (cfg.se_map2) {
        if (tape) tape->drop1_out = a;
        a = featuremap_se_forward_batch(a, m.se_map2, tape ? &tape->se_map2 : nullptr);
        check(a, "se_map2 output");
    }

    if (tape) tape->conv3dw_in = a;
    a = conv2d_forward(a, m.conv3_dw, cfg.spatial_maps(), 0, cfg.pad_t_left(cfg.k_separable),
                       cfg.pad_t_right(cfg.k_separable));
    check(a, "conv3 depthwise output");
    if (tape) tape->conv3pw_in = a;
    a = conv2d_forward(a, m.conv3_pw, 1, 0, 0, 0);
    check(a, "conv3 pointwise output");
    a = batch_norm_forward(a, m.bn3.gamma, m.bn3.beta, m.bn3.running_mean, m.bn3.running_var,
                           bn_mode, cfg.bn_momentum, cfg.bn_eps, tape ? &tape->bn3 : nullptr);
    check(a, "bn3 output");
    a = elu_forward(a, T(1), tape ? &tape->elu2 : nullptr);
    if (tape) tape->pool2_in_shape = a.shape();
    a = avg_pool_time_forward(a, cfg.pool2);
    check(a, "pool2 output");
    a = dropout_forward(a, cfg.dropout_p, rng, dropout_mode, tape ? &tape->drop2 : nullptr);

    if (cfg.se_map3) {
        if (tape) tape->drop2_out = a;
        a = featuremap_se_forward_batch(a, m.se_map3, tape ? &tape->se_map3 : nullptr);
        check(a, "se_map3 output");
    }

    Tensor<T> flat = a.reshaped({b, cfg.d_flat()});
    if (tape) {
        tape->flat_in = flat;
        tape->valid = true;
    }
    Tensor<T> logits = dense_forward(flat, m.fc_w, m.fc_b);
    check(logits, "logits");
    return logits;
}

template <typename T>
Tensor<T> forward_train(ModelState<T>& m, const Tensor<T>& batch, Rng& rng, Tape<T>* tape = nullptr) {
    return forward(m, batch, Mode::kTrain, Mode::kTrain, rng, tape);
}

/// Inference never draws randomness or touches running statistics, so a const
/// model is safe here.
template <typename T>
Tensor<T> forward_infer(const ModelState<T>& m, const Tensor<T>& batch, Tape<T>* tape = nullptr) {
    Rng unused(0);
    return forward(const_cast<ModelState<T>&>(m), batch, Mode::kInfer, Mode::kInfer, unused, tape);
}

/// Gradients of the loss w.r.t. every parameter, given the cotangent of the
/// logits. Returned in a ModelState with the same shapes (buffers zero).
/// conv_weight_grads=false skips the conv kernel gradients (the most
/// expensive reductions) for callers that keep the convolutions frozen; the
/// skipped entries stay zero.
template <typename T>
ModelState<T> backward(const ModelState<T>& m, const Tape<T>& tape, const Tensor<T>& dlogits,
                       bool conv_weight_grads = true) {
    if (!tape.valid) throw std::runtime_error("backward: missing forward tape");
    const ArchConfig& cfg = m.cfg;
    ModelState<T> g = zeros_like(m);

    DenseGrads<T> dg = dense_backward(dlogits, tape.flat_in, m.fc_w);
    g.fc_w = std::move(dg.dweight);
    g.fc_b = std::move(dg.dbias);
    const int b = tape.flat_in.dim(0);
    const int t2 = cfg.t_after_pool2();
    Tensor<T> d = dg.dinput.reshaped({b, cfg.f2, 1, t2});

    if (cfg.se_map3)
        d = featuremap_se_backward_batch(d, tape.drop2_out, m.se_map3, tape.se_map3,
                                         g.se_map3.w1, g.se_map3.w2);
    d = dropout_backward(tape.drop2, d);
    d = avg_pool_time_backward(d, tape.pool2_in_shape, cfg.pool2);
    d = elu_backward(tape.elu2, d);
    {
        BatchNormGrads<T> bg = batch_norm_backward(tape.bn3, d);
        d = std::move(bg.dinput);
        g.bn3.gamma = std::move(bg.dgamma);
        g.bn3.beta = std::move(bg.dbeta);
    }
    if (conv_weight_grads)
        g.conv3_pw = conv2d_backward_weights(d, tape.conv3pw_in, m.conv3_pw.shape(), 1, 0, 0, 0);
    d = conv2d_backward_input(d, m.conv3_pw, tape.conv3pw_in.shape(), 1, 0, 0, 0);
    if (conv_weight_grads)
        g.conv3_dw = conv2d_backward_weights(d, tape.conv3dw_in, m.conv3_dw.shape(), cfg.spatial_maps(),
                                             0, cfg.pad_t_left(cfg.k_separable), cfg.pad_t_right(cfg.k_separable));
    d = conv2d_backward_input(d, m.conv3_dw, tape.conv3dw_in.shape(), cfg.spatial_maps(), 0,
                              cfg.pad_t_left(cfg.k_separable), cfg.pad_t_right(cfg.k_separable));

    if (cfg.se_map2)
        d = featuremap_se_backward_batch(d, tape.drop1_out, m.se_map2, tape.se_map2,
                                         g.se_map2.w1, g.se_map2.w2);
    d = dropout_backward(tape.drop1, d);
    d = avg_pool_time_backward(d, tape.pool1_in_shape, cfg.pool1);
    d = elu_backward(tape.elu1, d);
    {
        BatchNormGrads<T> bg = batch_norm_backward(tape.bn2, d);
        d = std::move(bg.dinput);
        g.bn2.gamma = std::move(bg.dgamma);
        g.bn2.beta = std::move(bg.dbeta);
    }
    if (conv_weight_grads)
        g.conv2_w = conv2d_backward_weights(d, tape.conv2_in, m.conv2_w.shape(), cfg.f1, 0, 0, 0);
    d = conv2d_backward_input(d, m.conv2_w, tape.conv2_in.shape(), cfg.f1, 0, 0, 0);

    if (cfg.se_map1)
        d = featuremap_se_backward_batch(d, tape.se_post_out, m.se_map1, tape.se_map1,
                                         g.se_map1.w1, g.se_map1.w2);
    if (cfg.se_post_conv1)
        d = electrode_se_backward_batch(d, tape.bn1_out, m.se_post, tape.se_post,
                                        g.se_post.w1, g.se_post.w2);
    {
        BatchNormGrads<T> bg = batch_norm_backward(tape.bn1, d);
        d = std::move(bg.dinput);
        g.bn1.gamma = std::move(bg.dgamma);
        g.bn1.beta = std::move(bg.dbeta);
    }
    if (conv_weight_grads)
        g.conv1_w = conv2d_backward_weights(d, tape.conv1_in, m.conv1_w.shape(), 1, 0,
                                            cfg.pad_t_left(cfg.k_temporal), cfg.pad_t_right(cfg.k_temporal));
    // nothing upstream of conv1 needs gradients unless the input SE stage is on
    if (cfg.se_input) {
        d = conv2d_backward_input(d, m.conv1_w, tape.conv1_in.shape(), 1, 0,
                                  cfg.pad_t_left(cfg.k_temporal), cfg.pad_t_right(cfg.k_temporal));
        electrode_se_backward_batch(d, tape.x0, m.se_in, tape.se_in, g.se_in.w1, g.se_in.w2);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Prediction and rank extraction.

/// argmax over logits; ties break toward the lower class index.
template <typename T>
int argmax_class(const T* logits, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (logits[j] > logits[best]) best = j;
    return best;
}

template <typename T>
int predict(const ModelState<T>& m, const Tensor<T>& trial) {
    require(trial.ndim() == 2, "predict expects a [channels, samples] trial");
    const Tensor<T> logits =
        forward_infer(m, trial.reshaped({1, trial.dim(0), trial.dim(1)}));
    return argmax_class(logits.data(), logits.dim(1));
}

/// Batched inference over a dataset, chunked to bound activation memory.
template <typename T>
std::vector<int> predict_dataset(const ModelState<T>& m, const Dataset& ds, int chunk = 64) {
    require(chunk >= 1, "predict chunk must be >= 1");
    std::vector<int> out;
    out.reserve(ds.trials.size());
    const int n = ds.n_trials();
    for (int lo = 0; lo < n; lo += chunk) {
        const int hi = std::min(n, lo + chunk);
        Tensor<T> batch({hi - lo, m.cfg.n_channels, m.cfg.n_samples});
        for (int i = lo; i < hi; ++i) {
            const Tensor<float>& src = ds.trials[static_cast<std::size_t>(i)].data;
            require(src.shape() == Shape({m.cfg.n_channels, m.cfg.n_samples}),
                    "trial " + std::to_string(i) + " shape " + shape_str(src.shape()) +
                        " does not match the model input");
            for (std::size_t j = 0; j < src.numel(); ++j)
                batch.data()[static_cast<std::size_t>(i - lo) * src.numel() + j] = static_cast<T>(src[j]);
        }
        const Tensor<T> logits = forward_infer(m, batch);
        for (int i = 0; i < hi - lo; ++i)
            out.push_back(argmax_class(logits.data() + static_cast<std::size_t>(i) * 2, 2));
    }
    return out;
}

template <typename T>
struct ElectrodeRanks {
    Tensor<T> per_trial;  // [n_trials, n_channels]
    Tensor<T> mean;       // [n_channels]
};

/// Input-stage electrode ranks s_c for every trial plus the trial mean.
template <typename T>
ElectrodeRanks<T> extract_electrode_ranks(const ModelState<T>& m, const Dataset& ds) {
    require(!ds.trials.empty(), "extract_electrode_ranks: empty dataset");
    require(m.cfg.se_input, "extract_electrode_ranks: the input-stage electrode SE layer is disabled");
    const int n = ds.n_trials();
    const int c = m.cfg.n_channels;

    ElectrodeRanks<T> r;
    r.per_trial = Tensor<T>({n, c});
    r.mean = Tensor<T>({c});
    for (int i = 0; i < n; ++i) {
        const Tensor<float>& data = ds.trials[static_cast<std::size_t>(i)].data;
        require(data.shape() == Shape({c, m.cfg.n_samples}),
                "trial " + std::to_string(i) + " shape does not match the model input");
        const SeResult<T> se = electrode_se_forward(data.template cast<T>(), m.se_in);
        for (int j = 0; j < c; ++j) {
            r.per_trial.at({i, j}) = se.ranks[static_cast<std::size_t>(j)];
            r.mean[static_cast<std::size_t>(j)] += se.ranks[static_cast<std::size_t>(j)] / static_cast<T>(n);
        }
    }
    return r;
}

template <typename T>
struct FilterRanks {
    std::vector<T> stage1;  // len f1
    std::vector<T> stage2;  // len f1*depth_mult
    std::vector<T> stage3;  // len f2
};

/// Trial-averaged feature-map ranks s_F at the three SE stages.
template <typename T>
FilterRanks<T> extract_filter_ranks(const ModelState<T>& m, const Dataset& ds, int chunk = 64) {
    require(!ds.trials.empty(), "extract_filter_ranks: empty dataset");
    require(m.cfg.se_map1 && m.cfg.se_map2 && m.cfg.se_map3,
            "extract_filter_ranks: a feature-map SE stage is disabled");
    const int n = ds.n_trials();

    FilterRanks<T> r;
    r.stage1.assign(static_cast<std::size_t>(m.cfg.f1), T(0));
    r.stage2.assign(static_cast<std::size_t>(m.cfg.spatial_maps()), T(0));
    r.stage3.assign(static_cast<std::size_t>(m.cfg.f2), T(0));
    Tape<T> tape;
    for (int lo = 0; lo < n; lo += chunk) {
        const int hi = std::min(n, lo + chunk);
        Tensor<T> batch({hi - lo, m.cfg.n_channels, m.cfg.n_samples});
        for (int i = lo; i < hi; ++i) {
            const Tensor<float>& src = ds.trials[static_cast<std::size_t>(i)].data;
            require(src.shape() == Shape({m.cfg.n_channels, m.cfg.n_samples}),
                    "trial " + std::to_string(i) + " shape does not match the model input");
            for (std::size_t j = 0; j < src.numel(); ++j)
                batch.data()[static_cast<std::size_t>(i - lo) * src.numel() + j] = static_cast<T>(src[j]);
        }
        forward_infer(m, batch, &tape);
        auto accum = [&](const SeGateCtx<T>& ctx, std::vector<T>& into) {
            const int f = ctx.s.dim(1);
            for (int i = 0; i < hi - lo; ++i)
                for (int j = 0; j < f; ++j)
                    into[static_cast<std::size_t>(j)] +=
                        ctx.s.data()[static_cast<std::size_t>(i) * f + j] / static_cast<T>(n);
        };
        accum(tape.se_map1, r.stage1);
        accum(tape.se_map2, r.stage2);
        accum(tape.se_map3, r.stage3);
    }
    return r;
}

}  // namespace semd
