#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "semd/tensor.hpp"

// Forward operations and their analytic backward passes for the fixed layer
// set. Each differentiable op either needs no saved state (conv, dense) or
// returns a small context struct consumed by its *_backward counterpart.

namespace semd {

namespace detail {

// dot product with 32 independent accumulators (four 8-lane groups, so the
// FMA chains overlap); summation order is fixed and build-independent.
template <typename T>
inline T dotp(const T* a, const T* b, int n) {
    T acc[32] = {};
    int i = 0;
    for (; i + 32 <= n; i += 32)
        for (int j = 0; j < 32; ++j) acc[j] += a[i + j] * b[i + j];
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    T g0 = 0, g1 = 0, g2 = 0, g3 = 0;
    for (int j = 0; j < 8; ++j) {
        g0 += acc[j];
        g1 += acc[8 + j];
        g2 += acc[16 + j];
        g3 += acc[24 + j];
    }
    T s = (g0 + g1) + (g2 + g3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

struct ConvDims {
    int batch, c_in, h, w;
    int c_out, c_group, kh, kw;
    int h_out, w_out;
    int groups_out;  // c_out per group
};

inline ConvDims conv_dims(const Shape& in, const Shape& ker, int groups, int pad_h, int pad_wl,
                          int pad_wr) {
    require(in.size() == 4, "conv2d: input must be 4-d [B,C,H,W], got " + shape_str(in));
    require(ker.size() == 4, "conv2d: kernels must be 4-d [Cout,Cin/g,kH,kW], got " + shape_str(ker));
    require(groups >= 1, "conv2d: groups must be >= 1");
    require(pad_h >= 0 && pad_wl >= 0 && pad_wr >= 0, "conv2d: negative padding");
    ConvDims d;
    d.batch = in[0];
    d.c_in = in[1];
    d.h = in[2];
    d.w = in[3];
    d.c_out = ker[0];
    d.c_group = ker[1];
    d.kh = ker[2];
    d.kw = ker[3];
    require(d.c_in % groups == 0, "conv2d: input channel axis " + std::to_string(d.c_in) +
                                      " not divisible by groups " + std::to_string(groups));
    require(d.c_out % groups == 0, "conv2d: output channel axis " + std::to_string(d.c_out) +
                                       " not divisible by groups " + std::to_string(groups));
    require(d.c_group == d.c_in / groups,
            "conv2d: kernel channel axis " + std::to_string(d.c_group) + " != Cin/groups = " +
                std::to_string(d.c_in / groups));
    d.h_out = d.h + 2 * pad_h - d.kh + 1;
    d.w_out = d.w + pad_wl + pad_wr - d.kw + 1;
    require(d.h_out >= 1, "conv2d: kernel height " + std::to_string(d.kh) +
                              " exceeds padded input height " + std::to_string(d.h + 2 * pad_h));
    require(d.w_out >= 1, "conv2d: kernel width " + std::to_string(d.kw) +
                              " exceeds padded input width " + std::to_string(d.w + pad_wl + pad_wr));
    d.groups_out = d.c_out / groups;
    return d;
}

}  // namespace detail

/// Grouped 2-d cross-correlation (no kernel flip). Width padding may be
/// asymmetric; the (pad_h, pad_w) overload below pads symmetrically.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, int groups, int pad_h,
                         int pad_wl, int pad_wr) {
    const auto d = detail::conv_dims(input.shape(), kernels.shape(), groups, pad_h, pad_wl, pad_wr);
    Tensor<T> out({d.batch, d.c_out, d.h_out, d.w_out});
    const T* in = input.data();
    const T* ker = kernels.data();
    T* o = out.data();
    const std::size_t in_ch = static_cast<std::size_t>(d.h) * d.w;
    const std::size_t out_ch = static_cast<std::size_t>(d.h_out) * d.w_out;
    for (int b = 0; b < d.batch; ++b) {
        for (int co = 0; co < d.c_out; ++co) {
            const int g = co / d.groups_out;
            T* out_base = o + (static_cast<std::size_t>(b) * d.c_out + co) * out_ch;
            for (int ci = 0; ci < d.c_group; ++ci) {
                const int cin = g * d.c_group + ci;
                const T* in_base = in + (static_cast<std::size_t>(b) * d.c_in + cin) * in_ch;
                const T* kz = ker + ((static_cast<std::size_t>(co) * d.c_group + ci) * d.kh) * d.kw;
                for (int kh = 0; kh < d.kh; ++kh) {
                    for (int ho = 0; ho < d.h_out; ++ho) {
                        const int hi = ho + kh - pad_h;
                        if (hi < 0 || hi >= d.h) continue;
                        const T* in_row = in_base + static_cast<std::size_t>(hi) * d.w;
                        T* out_row = out_base + static_cast<std::size_t>(ho) * d.w_out;
                        for (int kw = 0; kw < d.kw; ++kw) {
                            const T k = kz[kh * d.kw + kw];
                            const int off = kw - pad_wl;
                            const int lo = std::max(0, -off);
                            const int hi_w = std::min(d.w_out, d.w - off);
                            const T* src = in_row + off;
                            for (int wo = lo; wo < hi_w; ++wo) out_row[wo] += k * src[wo];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, int groups, int pad_h,
                         int pad_w) {
    return conv2d_forward(input, kernels, groups, pad_h, pad_w, pad_w);
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& cotangent, const Tensor<T>& kernels,
                                const Shape& input_shape, int groups, int pad_h, int pad_wl,
                                int pad_wr) {
    const auto d = detail::conv_dims(input_shape, kernels.shape(), groups, pad_h, pad_wl, pad_wr);
    require(cotangent.shape() == Shape({d.batch, d.c_out, d.h_out, d.w_out}),
            "conv2d backward: cotangent shape " + shape_str(cotangent.shape()) +
                " does not match forward output");
    Tensor<T> din(input_shape);
    const T* ct = cotangent.data();
    const T* ker = kernels.data();
    T* gi = din.data();
    const std::size_t in_ch = static_cast<std::size_t>(d.h) * d.w;
    const std::size_t out_ch = static_cast<std::size_t>(d.h_out) * d.w_out;
    for (int b = 0; b < d.batch; ++b) {
        for (int co = 0; co < d.c_out; ++co) {
            const int g = co / d.groups_out;
            const T* ct_base = ct + (static_cast<std::size_t>(b) * d.c_out + co) * out_ch;
            for (int ci = 0; ci < d.c_group; ++ci) {
                const int cin = g * d.c_group + ci;
                T* gi_base = gi + (static_cast<std::size_t>(b) * d.c_in + cin) * in_ch;
                const T* kz = ker + ((static_cast<std::size_t>(co) * d.c_group + ci) * d.kh) * d.kw;
                for (int kh = 0; kh < d.kh; ++kh) {
                    for (int ho = 0; ho < d.h_out; ++ho) {
                        const int hi = ho + kh - pad_h;
                        if (hi < 0 || hi >= d.h) continue;
                        T* gi_row = gi_base + static_cast<std::size_t>(hi) * d.w;
                        const T* ct_row = ct_base + static_cast<std::size_t>(ho) * d.w_out;
                        for (int kw = 0; kw < d.kw; ++kw) {
                            const T k = kz[kh * d.kw + kw];
                            const int off = kw - pad_wl;
                            const int lo = std::max(0, -off);
                            const int hi_w = std::min(d.w_out, d.w - off);
                            T* dst = gi_row + off;
                            for (int wo = lo; wo < hi_w; ++wo) dst[wo] += k * ct_row[wo];
                        }
                    }
                }
            }
        }
    }
    return din;
}

template <typename T>
Tensor<T> conv2d_backward_weights(const Tensor<T>& cotangent, const Tensor<T>& input,
                                  const Shape& kernel_shape, int groups, int pad_h, int pad_wl,
                                  int pad_wr) {
    const auto d = detail::conv_dims(input.shape(), kernel_shape, groups, pad_h, pad_wl, pad_wr);
    require(cotangent.shape() == Shape({d.batch, d.c_out, d.h_out, d.w_out}),
            "conv2d backward: cotangent shape " + shape_str(cotangent.shape()) +
                " does not match forward output");
    Tensor<T> dker(kernel_shape);
    const T* ct = cotangent.data();
    const T* in = input.data();
    T* gk = dker.data();
    const std::size_t in_ch = static_cast<std::size_t>(d.h) * d.w;
    const std::size_t out_ch = static_cast<std::size_t>(d.h_out) * d.w_out;
    for (int b = 0; b < d.batch; ++b) {
        for (int co = 0; co < d.c_out; ++co) {
            const int g = co / d.groups_out;
            const T* ct_base = ct + (static_cast<std::size_t>(b) * d.c_out + co) * out_ch;
            for (int ci = 0; ci < d.c_group; ++ci) {
                const int cin = g * d.c_group + ci;
                const T* in_base = in + (static_cast<std::size_t>(b) * d.c_in + cin) * in_ch;
                T* gz = gk + ((static_cast<std::size_t>(co) * d.c_group + ci) * d.kh) * d.kw;
                for (int kh = 0; kh < d.kh; ++kh) {
                    for (int ho = 0; ho < d.h_out; ++ho) {
                        const int hi = ho + kh - pad_h;
                        if (hi < 0 || hi >= d.h) continue;
                        const T* in_row = in_base + static_cast<std::size_t>(hi) * d.w;
                        const T* ct_row = ct_base + static_cast<std::size_t>(ho) * d.w_out;
                        for (int kw = 0; kw < d.kw; ++kw) {
                            const int off = kw - pad_wl;
                            const int lo = std::max(0, -off);
                            const int hi_w = std::min(d.w_out, d.w - off);
                            if (hi_w <= lo) continue;
                            gz[kh * d.kw + kw] +=
                                detail::dotp(ct_row + lo, in_row + off + lo, hi_w - lo);
                        }
                    }
                }
            }
        }
    }
    return dker;
}

// ---------------------------------------------------------------------------
// Batch normalization, per channel of a [B,C,H,W] tensor.

enum class Mode { kTrain, kInfer };

template <typename T>
struct BatchNormCtx {
    bool valid = false;
    Mode mode = Mode::kTrain;
    Tensor<T> xhat;
    std::vector<T> inv_std;  // per channel
    std::vector<T> gamma;
};

template <typename T>
Tensor<T> batch_norm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                             Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                             double momentum, double eps, BatchNormCtx<T>* ctx = nullptr) {
    require(input.ndim() == 4, "batch_norm: input must be [B,C,H,W], got " + shape_str(input.shape()));
    const int batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(gamma.shape() == Shape({ch}) && beta.shape() == Shape({ch}),
            "batch_norm: gamma/beta must have shape [" + std::to_string(ch) + "]");
    require(running_mean.shape() == Shape({ch}) && running_var.shape() == Shape({ch}),
            "batch_norm: running stats must have shape [" + std::to_string(ch) + "]");
    require(eps > 0, "batch_norm: eps must be > 0");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t n = static_cast<std::size_t>(batch) * plane;
    if (mode == Mode::kTrain && n == 0)
        throw std::runtime_error("batch_norm: empty batch in train mode");

    Tensor<T> out(input.shape());
    if (ctx) {
        ctx->valid = true;
        ctx->mode = mode;
        ctx->xhat = Tensor<T>(input.shape());
        ctx->inv_std.assign(static_cast<std::size_t>(ch), T(0));
        ctx->gamma.assign(gamma.data(), gamma.data() + ch);
    }
    for (int c = 0; c < ch; ++c) {
        T mean, var;
        if (mode == Mode::kTrain) {
            double sum = 0;
            for (int b = 0; b < batch; ++b) {
                const T* p = input.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            mean = static_cast<T>(sum / static_cast<double>(n));
            double ssq = 0;
            for (int b = 0; b < batch; ++b) {
                const T* p = input.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = static_cast<double>(p[i]) - mean;
                    ssq += d * d;
                }
            }
            var = static_cast<T>(ssq / static_cast<double>(n));
            running_mean[static_cast<std::size_t>(c)] =
                static_cast<T>((1.0 - momentum) * running_mean[static_cast<std::size_t>(c)] +
                               momentum * mean);
            running_var[static_cast<std::size_t>(c)] =
                static_cast<T>((1.0 - momentum) * running_var[static_cast<std::size_t>(c)] +
                               momentum * var);
        } else {
            mean = running_mean[static_cast<std::size_t>(c)];
            var = running_var[static_cast<std::size_t>(c)];
        }
        const T inv_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
        const T g = gamma[static_cast<std::size_t>(c)];
        const T bta = beta[static_cast<std::size_t>(c)];
        if (ctx) ctx->inv_std[static_cast<std::size_t>(c)] = inv_std;
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            const T* p = input.data() + base;
            T* q = out.data() + base;
            T* xh = ctx ? ctx->xhat.data() + base : nullptr;
            for (std::size_t i = 0; i < plane; ++i) {
                const T xhat = (p[i] - mean) * inv_std;
                if (xh) xh[i] = xhat;
                q[i] = g * xhat + bta;
            }
        }
    }
    return out;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> dinput;
    Tensor<T> dgamma;
    Tensor<T> dbeta;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCtx<T>& ctx, const Tensor<T>& cotangent) {
    if (!ctx.valid) throw std::runtime_error("batch_norm backward: missing forward context");
    require(cotangent.shape() == ctx.xhat.shape(),
            "batch_norm backward: cotangent shape " + shape_str(cotangent.shape()));
    const int batch = cotangent.dim(0), ch = cotangent.dim(1);
    const std::size_t plane = static_cast<std::size_t>(cotangent.dim(2)) * cotangent.dim(3);
    const std::size_t n = static_cast<std::size_t>(batch) * plane;
    BatchNormGrads<T> g;
    g.dinput = Tensor<T>(cotangent.shape());
    g.dgamma = Tensor<T>({ch});
    g.dbeta = Tensor<T>({ch});
    for (int c = 0; c < ch; ++c) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            const T* dy = cotangent.data() + base;
            const T* xh = ctx.xhat.data() + base;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
            }
        }
        g.dgamma[static_cast<std::size_t>(c)] = static_cast<T>(sum_dy_xhat);
        g.dbeta[static_cast<std::size_t>(c)] = static_cast<T>(sum_dy);
        const T gm = ctx.gamma[static_cast<std::size_t>(c)];
        const T inv_std = ctx.inv_std[static_cast<std::size_t>(c)];
        if (ctx.mode == Mode::kInfer) {
            // running stats are constants: straight-through scale
            const T k = gm * inv_std;
            for (int b = 0; b < batch; ++b) {
                const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                const T* dy = cotangent.data() + base;
                T* dx = g.dinput.data() + base;
                for (std::size_t i = 0; i < plane; ++i) dx[i] = k * dy[i];
            }
            continue;
        }
        const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(n));
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(n));
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            const T* dy = cotangent.data() + base;
            const T* xh = ctx.xhat.data() + base;
            T* dx = g.dinput.data() + base;
            for (std::size_t i = 0; i < plane; ++i)
                dx[i] = gm * inv_std * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ELU

template <typename T>
struct EluCtx {
    bool valid = false;
    Tensor<T> output;
    T alpha = T(1);
};

template <typename T>
Tensor<T> elu_forward(const Tensor<T>& input, T alpha = T(1), EluCtx<T>* ctx = nullptr) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const T x = input[i];
        out[i] = x >= T(0) ? x : alpha * static_cast<T>(std::expm1(static_cast<double>(x)));
    }
    if (ctx) {
        ctx->valid = true;
        ctx->output = out;
        ctx->alpha = alpha;
    }
    return out;
}

template <typename T>
Tensor<T> elu_backward(const EluCtx<T>& ctx, const Tensor<T>& cotangent) {
    if (!ctx.valid) throw std::runtime_error("elu backward: missing forward context");
    require(cotangent.shape() == ctx.output.shape(), "elu backward: cotangent shape mismatch");
    Tensor<T> dx(cotangent.shape());
    for (std::size_t i = 0; i < cotangent.numel(); ++i) {
        const T y = ctx.output[i];
        dx[i] = y < T(0) ? cotangent[i] * (y + ctx.alpha) : cotangent[i];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Non-overlapping average pooling over the time (last) axis. A tail shorter
// than the window is trimmed.

template <typename T>
Tensor<T> avg_pool_time_forward(const Tensor<T>& input, int width) {
    require(width >= 1, "avg_pool_time: width must be >= 1, got " + std::to_string(width));
    require(input.ndim() >= 1, "avg_pool_time: input must have at least one axis");
    const int w = input.dim(input.ndim() - 1);
    const int w_out = w / width;
    require(w_out >= 1, "avg_pool_time: width " + std::to_string(width) +
                            " exceeds time axis extent " + std::to_string(w));
    Shape out_shape = input.shape();
    out_shape.back() = w_out;
    Tensor<T> out(out_shape);
    const std::size_t rows = input.numel() / static_cast<std::size_t>(w);
    const T inv = T(1) / static_cast<T>(width);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = input.data() + r * static_cast<std::size_t>(w);
        T* dst = out.data() + r * static_cast<std::size_t>(w_out);
        for (int wo = 0; wo < w_out; ++wo) {
            T s = 0;
            for (int j = 0; j < width; ++j) s += src[wo * width + j];
            dst[wo] = s * inv;
        }
    }
    return out;
}

template <typename T>
Tensor<T> avg_pool_time_backward(const Tensor<T>& cotangent, const Shape& input_shape, int width) {
    Tensor<T> dx(input_shape);
    const int w = input_shape.back();
    const int w_out = w / width;
    require(cotangent.dim(cotangent.ndim() - 1) == w_out, "avg_pool_time backward: shape mismatch");
    const std::size_t rows = dx.numel() / static_cast<std::size_t>(w);
    const T inv = T(1) / static_cast<T>(width);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = cotangent.data() + r * static_cast<std::size_t>(w_out);
        T* dst = dx.data() + r * static_cast<std::size_t>(w);
        for (int wo = 0; wo < w_out; ++wo)
            for (int j = 0; j < width; ++j) dst[wo * width + j] = src[wo] * inv;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors scaled by 1/(1-p) at train time, identity at
// inference.

template <typename T>
struct DropoutCtx {
    bool valid = false;
    bool identity = true;
    Tensor<T> mask;  // 0 or 1/(1-p) per element
};

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& input, double p, Rng& rng, Mode mode,
                          DropoutCtx<T>* ctx = nullptr) {
    require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0,1), got " + std::to_string(p));
    if (mode == Mode::kInfer || p == 0.0) {
        if (ctx) {
            ctx->valid = true;
            ctx->identity = true;
        }
        return input;
    }
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> mask(input.shape());
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const T m = rng.uniform() < p ? T(0) : scale;
        mask[i] = m;
        out[i] = m * input[i];
    }
    if (ctx) {
        ctx->valid = true;
        ctx->identity = false;
        ctx->mask = std::move(mask);
    }
    return out;
}

template <typename T>
Tensor<T> dropout_backward(const DropoutCtx<T>& ctx, const Tensor<T>& cotangent) {
    if (!ctx.valid) throw std::runtime_error("dropout backward: missing forward context");
    if (ctx.identity) return cotangent;
    require(cotangent.shape() == ctx.mask.shape(), "dropout backward: cotangent shape mismatch");
    Tensor<T> dx(cotangent.shape());
    for (std::size_t i = 0; i < cotangent.numel(); ++i) dx[i] = cotangent[i] * ctx.mask[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Dense layer: out = input * W^T + b with input [B,D], W [K,D], b [K].

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    require(input.ndim() == 2, "dense: input must be [B,D], got " + shape_str(input.shape()));
    require(weight.ndim() == 2, "dense: weight must be [K,D], got " + shape_str(weight.shape()));
    const int batch = input.dim(0), d = input.dim(1), k = weight.dim(0);
    require(weight.dim(1) == d, "dense: weight inner axis " + std::to_string(weight.dim(1)) +
                                    " != input feature axis " + std::to_string(d));
    require(bias.shape() == Shape({k}), "dense: bias must have shape [" + std::to_string(k) + "]");
    Tensor<T> out({batch, k});
    for (int b = 0; b < batch; ++b) {
        const T* x = input.data() + static_cast<std::size_t>(b) * d;
        T* y = out.data() + static_cast<std::size_t>(b) * k;
        for (int j = 0; j < k; ++j)
            y[j] = bias[static_cast<std::size_t>(j)] +
                   detail::dotp(x, weight.data() + static_cast<std::size_t>(j) * d, d);
    }
    return out;
}

template <typename T>
struct DenseGrads {
    Tensor<T> dinput;
    Tensor<T> dweight;
    Tensor<T> dbias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& cotangent, const Tensor<T>& input,
                             const Tensor<T>& weight) {
    const int batch = input.dim(0), d = input.dim(1), k = weight.dim(0);
    require(cotangent.shape() == Shape({batch, k}), "dense backward: cotangent shape mismatch");
    DenseGrads<T> g;
    g.dinput = Tensor<T>({batch, d});
    g.dweight = Tensor<T>({k, d});
    g.dbias = Tensor<T>({k});
    for (int b = 0; b < batch; ++b) {
        const T* dy = cotangent.data() + static_cast<std::size_t>(b) * k;
        const T* x = input.data() + static_cast<std::size_t>(b) * d;
        T* dx = g.dinput.data() + static_cast<std::size_t>(b) * d;
        for (int j = 0; j < k; ++j) {
            const T c = dy[j];
            g.dbias[static_cast<std::size_t>(j)] += c;
            const T* wrow = weight.data() + static_cast<std::size_t>(j) * d;
            T* dwrow = g.dweight.data() + static_cast<std::size_t>(j) * d;
            for (int i = 0; i < d; ++i) {
                dx[i] += c * wrow[i];
                dwrow[i] += c * x[i];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Softmax + categorical cross-entropy, mean over the batch.

template <typename T>
struct SoftmaxXent {
    T loss;
    Tensor<T> probs;
};

template <typename T>
SoftmaxXent<T> softmax_xent_forward(const Tensor<T>& logits, const std::vector<int>& labels) {
    require(logits.ndim() == 2, "softmax_xent: logits must be [B,K], got " + shape_str(logits.shape()));
    const int batch = logits.dim(0), k = logits.dim(1);
    require(static_cast<int>(labels.size()) == batch,
            "softmax_xent: " + std::to_string(labels.size()) + " labels for batch of " +
                std::to_string(batch));
    SoftmaxXent<T> r;
    r.probs = Tensor<T>({batch, k});
    double total = 0;
    for (int b = 0; b < batch; ++b) {
        const int label = labels[static_cast<std::size_t>(b)];
        if (label < 0 || label >= k)
            throw std::invalid_argument("softmax_xent: label " + std::to_string(label) +
                                        " outside [0," + std::to_string(k) + ") at row " +
                                        std::to_string(b));
        const T* x = logits.data() + static_cast<std::size_t>(b) * k;
        T* p = r.probs.data() + static_cast<std::size_t>(b) * k;
        T m = x[0];
        for (int j = 1; j < k; ++j) m = std::max(m, x[j]);
        double z = 0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(x[j] - m));
        for (int j = 0; j < k; ++j)
            p[j] = static_cast<T>(std::exp(static_cast<double>(x[j] - m)) / z);
        total += std::log(z) - static_cast<double>(x[label] - m);
    }
    r.loss = static_cast<T>(total / static_cast<double>(batch));
    return r;
}

template <typename T>
Tensor<T> softmax_xent_backward(const SoftmaxXent<T>& fwd, const std::vector<int>& labels,
                                T loss_cotangent = T(1)) {
    const int batch = fwd.probs.dim(0), k = fwd.probs.dim(1);
    Tensor<T> dlogits({batch, k});
    const T scale = loss_cotangent / static_cast<T>(batch);
    for (int b = 0; b < batch; ++b) {
        const T* p = fwd.probs.data() + static_cast<std::size_t>(b) * k;
        T* d = dlogits.data() + static_cast<std::size_t>(b) * k;
        for (int j = 0; j < k; ++j)
            d[j] = scale * (p[j] - (j == labels[static_cast<std::size_t>(b)] ? T(1) : T(0)));
    }
    return dlogits;
}

}  // namespace semd
