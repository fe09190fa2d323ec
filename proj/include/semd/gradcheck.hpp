#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "semd/model.hpp"
#include "semd/ops.hpp"

namespace semd {

// Finite-difference verification of every analytic gradient in the layer
// zoo, in double precision. Each op is checked on many small random
// instances (random shapes, data, and hyperparameters); the analytic
// gradient of a random linear functional of the output is compared against
// central differences element by element.

struct GradCheckOptions {
    std::uint64_t seed = 1;
    int instances = 20;      // random instances per op
    double h = 1e-5;         // central-difference step
    double tol = 1e-4;       // max relative error allowed
    std::string perturb_op;  // test hook: corrupt this op's analytic gradient
};

struct GradCheckResult {
    std::string op;
    int instances = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace gradcheck_detail {

using T = double;
using Fn = std::function<double(const Tensor<T>&)>;

inline Tensor<T> rand_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.uniform(-1.0, 1.0);
    return t;
}

inline double weighted(const Tensor<T>& out, const Tensor<T>& w) {
    require(out.numel() == w.numel(), "gradcheck: objective weight size mismatch");
    double s = 0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * w[i];
    return s;
}

inline Tensor<T> fd_grad(const Tensor<T>& x0, double h, const Fn& f) {
    Tensor<T> x = x0;
    Tensor<T> g(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = f(x);
        x[i] = orig - h;
        const double dn = f(x);
        x[i] = orig;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

/// One named tensor argument of an op instance: its analytic gradient and
/// the objective as a function of that tensor alone (others held fixed).
struct Arg {
    Tensor<T> value;
    Tensor<T> analytic;
    Fn objective;
};

inline double max_rel_err(std::vector<Arg> args, double h, bool perturb) {
    double worst = 0.0;
    bool first = true;
    for (Arg& a : args) {
        if (perturb && first) {
            require(a.analytic.numel() > 0, "gradcheck: cannot perturb an empty gradient");
            a.analytic[0] += 1.0;  // deliberate corruption, must be caught
            first = false;
        }
        const Tensor<T> fd = fd_grad(a.value, h, a.objective);
        require(fd.shape() == a.analytic.shape(), "gradcheck: gradient shape mismatch");
        for (std::size_t i = 0; i < fd.numel(); ++i) {
            const double err =
                std::abs(a.analytic[i] - fd[i]) / std::max(1.0, std::abs(fd[i]));
            if (err > worst) worst = err;
        }
    }
    return worst;
}

inline int draw(Rng& rng, int lo, int hi) {  // inclusive
    return lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
}

// --- one instance per op; each returns the worst relative error -----------

inline double check_conv(Rng& rng, bool perturb, double h_fd, int role) {
    int b = draw(rng, 1, 2), cin = 1, cout = 1, h = 1, w = 1, kh = 1, kw = 1;
    int groups = 1, pad_h = 0, pad_l = 0, pad_r = 0;
    if (role == 0) {  // temporal: groups=1, kernel along time, same padding
        cin = draw(rng, 1, 2);
        cout = draw(rng, 1, 3);
        h = draw(rng, 2, 3);
        w = draw(rng, 5, 8);
        kw = draw(rng, 1, 5);
        pad_l = (kw - 1) / 2;
        pad_r = kw / 2;
    } else if (role == 1) {  // depthwise spatial: kernel spans the height axis
        cin = draw(rng, 2, 3);
        const int mult = draw(rng, 1, 2);
        cout = cin * mult;
        groups = cin;
        h = draw(rng, 2, 4);
        kh = h;  // valid convolution consuming the full height
        w = draw(rng, 3, 6);
    } else {  // pointwise 1x1
        cin = draw(rng, 2, 4);
        cout = draw(rng, 1, 3);
        h = draw(rng, 1, 2);
        w = draw(rng, 3, 5);
    }
    const int cg = cin / groups;
    const Tensor<T> x = rand_tensor({b, cin, h, w}, rng);
    const Tensor<T> k = rand_tensor({cout, cg, kh, kw}, rng);
    const Tensor<T> out = conv2d_forward(x, k, groups, pad_h, pad_l, pad_r);
    const Tensor<T> cot = rand_tensor(out.shape(), rng);

    std::vector<Arg> args(2);
    args[0].value = x;
    args[0].analytic = conv2d_backward_input(cot, k, x.shape(), groups, pad_h, pad_l, pad_r);
    args[0].objective = [=](const Tensor<T>& v) {
        return weighted(conv2d_forward(v, k, groups, pad_h, pad_l, pad_r), cot);
    };
    args[1].value = k;
    args[1].analytic = conv2d_backward_weights(cot, x, k.shape(), groups, pad_h, pad_l, pad_r);
    args[1].objective = [=](const Tensor<T>& v) {
        return weighted(conv2d_forward(x, v, groups, pad_h, pad_l, pad_r), cot);
    };
    return max_rel_err(std::move(args), h_fd, perturb);
}

inline double check_batch_norm(Rng& rng, bool perturb, double h_fd) {
    const int b = draw(rng, 2, 3), c = draw(rng, 1, 3), h = draw(rng, 1, 2), w = draw(rng, 2, 4);
    const double eps = 1e-5, momentum = 0.01;
    const Tensor<T> x = rand_tensor({b, c, h, w}, rng);
    Tensor<T> gamma = rand_tensor({c}, rng);
    for (std::size_t i = 0; i < gamma.numel(); ++i) gamma[i] += 1.5;  // keep away from 0
    const Tensor<T> beta = rand_tensor({c}, rng);
    const Tensor<T> rm0({c}), rv0 = Tensor<T>({c}, T(1));
    const Tensor<T> cot = rand_tensor(x.shape(), rng);

    Tensor<T> rm = rm0, rv = rv0;
    BatchNormCtx<T> ctx;
    batch_norm_forward(x, gamma, beta, rm, rv, Mode::kTrain, momentum, eps, &ctx);
    const BatchNormGrads<T> g = batch_norm_backward(ctx, cot);

    const Tensor<T> gamma_f = gamma;
    auto run = [=](const Tensor<T>& xv, const Tensor<T>& gv, const Tensor<T>& bv) {
        Tensor<T> m = rm0, v = rv0;  // fresh running stats per evaluation
        return weighted(batch_norm_forward(xv, gv, bv, m, v, Mode::kTrain, momentum, eps), cot);
    };
    std::vector<Arg> args(3);
    args[0] = {x, g.dinput, [=](const Tensor<T>& v) { return run(v, gamma_f, beta); }};
    args[1] = {gamma_f, g.dgamma, [=](const Tensor<T>& v) { return run(x, v, beta); }};
    args[2] = {beta, g.dbeta, [=](const Tensor<T>& v) { return run(x, gamma_f, v); }};
    return max_rel_err(std::move(args), h_fd, perturb);
}

inline double check_elu(Rng& rng, bool perturb, double h_fd) {
    const Tensor<T> x = rand_tensor({draw(rng, 1, 2), draw(rng, 1, 3), 1, draw(rng, 3, 7)}, rng, 2.0);
    const T alpha = T(1);
    EluCtx<T> ctx;
    elu_forward(x, alpha, &ctx);
    const Tensor<T> cot = rand_tensor(x.shape(), rng);
    std::vector<Arg> args(1);
    args[0] = {x, elu_backward(ctx, cot), [=](const Tensor<T>& v) {
                   return weighted(elu_forward(v, alpha), cot);
               }};
    return max_rel_err(std::move(args), h_fd, perturb);
}

inline double check_avg_pool(Rng& rng, bool perturb, double h_fd) {
    const int width = draw(rng, 1, 3);
    const int t = width * draw(rng, 1, 3) + (draw(rng, 0, 1) ? width / 2 : 0);  // tail allowed
    const Tensor<T> x = rand_tensor({draw(rng, 1, 2), draw(rng, 1, 3), 1, t}, rng);
    const Tensor<T> out = avg_pool_time_forward(x, width);
    const Tensor<T> cot = rand_tensor(out.shape(), rng);
    std::vector<Arg> args(1);
    args[0] = {x, avg_pool_time_backward(cot, x.shape(), width), [=](const Tensor<T>& v) {
                   return weighted(avg_pool_time_forward(v, width), cot);
               }};
    return max_rel_err(std::move(args), h_fd, perturb);
}

inline double check_dropout(Rng& rng, bool perturb, double h_fd) {
    const double p = draw(rng, 0, 1) ? 0.25 : 0.5;
    const std::uint64_t mask_seed = rng.next_u64();
    const Tensor<T> x = rand_tensor({draw(rng, 1, 2), draw(rng, 2, 3), 1, draw(rng, 3, 6)}, rng);
    Rng mrng(mask_seed);
    DropoutCtx<T> ctx;
    const Tensor<T> out = dropout_forward(x, p, mrng, Mode::kTrain, &ctx);
    const Tensor<T> cot = rand_tensor(out.shape(), rng);
    std::vector<Arg> args(1);
    args[0] = {x, dropout_backward(ctx, cot), [=](const Tensor<T>& v) {
                   Rng r(mask_seed);  // same mask on every evaluation
                   return weighted(dropout_forward(v, p, r, Mode::kTrain), cot);
               }};
    return max_rel_err(std::move(args), h_fd, perturb);
}

inline double check_dense(Rng& rng, bool perturb, double h_fd) {
    const int b = draw(rng, 1, 3), d = draw(rng, 2, 6), k = draw(rng, 2, 3);
    const Tensor<T> x = rand_tensor({b, d}, rng);
    const Tensor<T> w = rand_tensor({k, d}, rng);
    const Tensor<T> bias = rand_tensor({k}, rng);
    const Tensor<T> out = dense_forward(x, w, bias);
    const Tensor<T> cot = rand_tensor(out.shape(), rng);
    DenseGrads<T> g = dense_backward(cot, x, w);
    std::vector<Arg> args(3);
    args[0] = {x, std::move(g.dinput),
               [=](const Tensor<T>& v) { return weighted(dense_forward(v, w, bias), cot); }};
    args[1] = {w, std::move(g.dweight),
               [=](const Tensor<T>& v) { return weighted(dense_forward(x, v, bias), cot); }};
    args[2] = {bias, std::move(g.dbias),
               [=](const Tensor<T>& v) { return weighted(dense_forward(x, w, v), cot); }};
    return max_rel_err(std::move(args), h_fd, perturb);
}

inline double check_softmax_xent(Rng& rng, bool perturb, double h_fd) {
    const int b = draw(rng, 1, 4), k = draw(rng, 2, 3);
    const Tensor<T> logits = rand_tensor({b, k}, rng, 2.0);
    std::vector<int> labels(static_cast<std::size_t>(b));
    for (int& l : labels) l = draw(rng, 0, k - 1);
    const SoftmaxXent<T> fwd = softmax_xent_forward(logits, labels);
    std::vector<Arg> args(1);
    args[0] = {logits, softmax_xent_backward(fwd, labels), [=](const Tensor<T>& v) {
                   return static_cast<double>(softmax_xent_forward(v, labels).loss);
               }};
    return max_rel_err(std::move(args), h_fd, perturb);
}

inline double check_se(Rng& rng, bool perturb, double h_fd, bool electrode) {
    const int b = draw(rng, 1, 2), f = electrode ? draw(rng, 1, 2) : draw(rng, 2, 4);
    const int c = electrode ? draw(rng, 3, 4) : draw(rng, 1, 3);
    const int t = draw(rng, 2, 4);
    const int n = electrode ? c : f;
    const int hidden = draw(rng, 1, 2);
    const Tensor<T> x = rand_tensor({b, f, c, t}, rng);
    SeWeights<T> w;
    w.w1 = rand_tensor({hidden, n}, rng);
    w.w2 = rand_tensor({n, hidden}, rng);

    SeGateCtx<T> ctx;
    const Tensor<T> out = electrode ? electrode_se_forward_batch(x, w, &ctx)
                                    : featuremap_se_forward_batch(x, w, &ctx);
    const Tensor<T> cot = rand_tensor(out.shape(), rng);
    Tensor<T> dw1, dw2;
    const Tensor<T> dx = electrode ? electrode_se_backward_batch(cot, x, w, ctx, dw1, dw2)
                                   : featuremap_se_backward_batch(cot, x, w, ctx, dw1, dw2);

    auto run = [=](const Tensor<T>& xv, const Tensor<T>& w1v, const Tensor<T>& w2v) {
        SeWeights<T> wv;
        wv.w1 = w1v;
        wv.w2 = w2v;
        return weighted(electrode ? electrode_se_forward_batch(xv, wv)
                                  : featuremap_se_forward_batch(xv, wv),
                        cot);
    };
    const Tensor<T> w1 = w.w1, w2 = w.w2;
    std::vector<Arg> args(3);
    args[0] = {x, dx, [=](const Tensor<T>& v) { return run(v, w1, w2); }};
    args[1] = {w1, std::move(dw1), [=](const Tensor<T>& v) { return run(x, v, w2); }};
    args[2] = {w2, std::move(dw2), [=](const Tensor<T>& v) { return run(x, w1, v); }};
    return max_rel_err(std::move(args), h_fd, perturb);
}

}  // namespace gradcheck_detail

/// Runs the finite-difference suite. Each op is checked on opt.instances
/// seeded random instances; opt.perturb_op corrupts that op's analytic
/// gradient on its first instance so the suite must flag it.
inline std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt = {}) {
    namespace gd = gradcheck_detail;
    require(opt.instances >= 1, "gradcheck: instances must be >= 1");
    require(opt.h > 0 && opt.tol > 0, "gradcheck: h and tol must be > 0");

    using Check = std::function<double(Rng&, bool, double)>;
    const std::vector<std::pair<std::string, Check>> ops = {
        {"conv2d-temporal", [](Rng& r, bool p, double h) { return gd::check_conv(r, p, h, 0); }},
        {"conv2d-spatial-depthwise", [](Rng& r, bool p, double h) { return gd::check_conv(r, p, h, 1); }},
        {"conv2d-pointwise", [](Rng& r, bool p, double h) { return gd::check_conv(r, p, h, 2); }},
        {"batch-norm", [](Rng& r, bool p, double h) { return gd::check_batch_norm(r, p, h); }},
        {"elu", [](Rng& r, bool p, double h) { return gd::check_elu(r, p, h); }},
        {"avg-pool-time", [](Rng& r, bool p, double h) { return gd::check_avg_pool(r, p, h); }},
        {"dropout", [](Rng& r, bool p, double h) { return gd::check_dropout(r, p, h); }},
        {"dense", [](Rng& r, bool p, double h) { return gd::check_dense(r, p, h); }},
        {"softmax-xent", [](Rng& r, bool p, double h) { return gd::check_softmax_xent(r, p, h); }},
        {"electrode-se", [](Rng& r, bool p, double h) { return gd::check_se(r, p, h, true); }},
        {"featuremap-se", [](Rng& r, bool p, double h) { return gd::check_se(r, p, h, false); }},
    };
    bool perturb_known = opt.perturb_op.empty();
    for (const auto& [name, fn] : ops)
        if (name == opt.perturb_op) perturb_known = true;
    if (!perturb_known)
        throw std::invalid_argument("gradcheck: unknown op '" + opt.perturb_op + "'");

    std::vector<GradCheckResult> results;
    std::uint64_t op_index = 0;
    for (const auto& [name, fn] : ops) {
        GradCheckResult r;
        r.op = name;
        r.instances = opt.instances;
        for (int inst = 0; inst < opt.instances; ++inst) {
            Rng rng(mix_seed(opt.seed, op_index * 1000 + static_cast<std::uint64_t>(inst)));
            const bool perturb = name == opt.perturb_op && inst == 0;
            r.max_rel_err = std::max(r.max_rel_err, fn(rng, perturb, opt.h));
        }
        r.pass = r.max_rel_err < opt.tol;
        results.push_back(std::move(r));
        ++op_index;
    }
    return results;
}

inline bool gradcheck_passed(const std::vector<GradCheckResult>& results) {
    for (const GradCheckResult& r : results)
        if (!r.pass) return false;
    return !results.empty();
}

}  // namespace semd
