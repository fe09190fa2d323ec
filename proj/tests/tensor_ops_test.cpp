#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "semd/ops.hpp"
#include "semd/tensor.hpp"
#include "test_util.hpp"

using namespace semd;
using testutil::fd_grad;
using testutil::max_rel_err;
using testutil::naive_conv2d;
using testutil::rand_tensor;
using testutil::weighted_sum;

TEST_CASE("conv2d delta kernel is the identity") {
    Rng rng(11);
    auto x = rand_tensor<double>({1, 2, 5, 7}, rng);
    Tensor<double> ker({2, 1, 3, 3});
    ker.at({0, 0, 1, 1}) = 1.0;
    ker.at({1, 0, 1, 1}) = 1.0;
    auto y = conv2d_forward(x, ker, 2, 1, 1);
    REQUIRE(y.shape() == x.shape());
    REQUIRE(testutil::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d matches hand example [1,2,3] * [1,1]") {
    Tensor<double> x({1, 1, 1, 3}, {1, 2, 3});
    Tensor<double> k({1, 1, 1, 2}, {1, 1});
    auto y = conv2d_forward(x, k, 1, 0, 0);
    REQUIRE(y.shape() == Shape({1, 1, 1, 2}));
    CHECK(y[0] == 3.0);
    CHECK(y[1] == 5.0);
}

TEST_CASE("conv2d zero input gives zero output") {
    Rng rng(3);
    Tensor<float> x({2, 3, 4, 6});
    auto k = rand_tensor<float>({6, 1, 2, 3}, rng);
    auto y = conv2d_forward(x, k, 3, 1, 2);
    for (std::size_t i = 0; i < y.numel(); ++i) REQUIRE(y[i] == 0.0f);
}

TEST_CASE("conv2d agrees with nested-loop oracle") {
    Rng rng(17);
    struct Case {
        Shape in, ker;
        int groups, ph, pw;
    };
    const Case cases[] = {
        {{2, 1, 4, 12}, {3, 1, 1, 5}, 1, 0, 2},   // temporal
        {{2, 4, 6, 9}, {8, 1, 6, 1}, 4, 0, 0},    // depthwise spatial
        {{2, 3, 2, 5}, {4, 3, 1, 1}, 1, 0, 0},    // pointwise
        {{1, 6, 5, 5}, {6, 2, 3, 3}, 3, 1, 1},    // grouped, padded
    };
    for (const auto& c : cases) {
        auto x = rand_tensor<double>(c.in, rng);
        auto k = rand_tensor<double>(c.ker, rng);
        auto got = conv2d_forward(x, k, c.groups, c.ph, c.pw);
        auto want = naive_conv2d(x, k, c.groups, c.ph, c.pw);
        REQUIRE(got.shape() == want.shape());
        CHECK(testutil::max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv2d asymmetric width padding keeps even-kernel output length") {
    Rng rng(23);
    auto x = rand_tensor<double>({1, 1, 2, 10}, rng);
    auto k = rand_tensor<double>({2, 1, 1, 4}, rng);
    auto y = conv2d_forward(x, k, 1, 0, 1, 2);  // 10 + 3 - 4 + 1 = 10
    REQUIRE(y.shape() == Shape({1, 2, 2, 10}));
    // interior positions agree with the symmetric-pad oracle shifted by one
    auto wide = conv2d_forward(x, k, 1, 0, 2, 2);
    for (int wo = 0; wo < 10; ++wo)
        CHECK(y.at({0, 1, 1, wo}) == wide.at({0, 1, 1, wo + 1}));
}

TEST_CASE("conv2d is linear in its input") {
    Rng rng(29);
    auto x = rand_tensor<double>({1, 2, 3, 8}, rng);
    auto y = rand_tensor<double>({1, 2, 3, 8}, rng);
    auto k = rand_tensor<double>({4, 2, 2, 3}, rng);
    const double a = 1.7, b = -0.4;
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) mix[i] = a * x[i] + b * y[i];
    auto lhs = conv2d_forward(mix, k, 1, 1, 1);
    auto cx = conv2d_forward(x, k, 1, 1, 1);
    auto cy = conv2d_forward(y, k, 1, 1, 1);
    for (std::size_t i = 0; i < lhs.numel(); ++i)
        CHECK(lhs[i] == Catch::Approx(a * cx[i] + b * cy[i]).epsilon(1e-6).margin(1e-9));
}

TEST_CASE("conv2d rejects mismatched shapes with axes named") {
    Tensor<float> x({1, 3, 4, 4});
    Tensor<float> k({2, 2, 2, 2});  // Cin/groups would be 3
    REQUIRE_THROWS_WITH(conv2d_forward(x, k, 1, 0, 0),
                        Catch::Matchers::ContainsSubstring("kernel channel axis"));
    Tensor<float> k2({2, 3, 6, 2});  // kernel taller than input
    REQUIRE_THROWS_WITH(conv2d_forward(x, k2, 1, 0, 0),
                        Catch::Matchers::ContainsSubstring("height"));
    Tensor<float> x2({1, 3, 4, 4});
    REQUIRE_THROWS_AS(conv2d_forward(x2, k, 2, 0, 0), std::invalid_argument);
}

TEST_CASE("conv2d backward matches finite differences on random 2x2x4x6 input") {
    Rng rng(41);
    auto x = rand_tensor<double>({2, 2, 4, 6}, rng);
    auto k = rand_tensor<double>({4, 2, 2, 3}, rng);
    auto cot = rand_tensor<double>({2, 4, 3, 6}, rng);  // pad (0,1): H'=3, W'=6
    auto dx = conv2d_backward_input(cot, k, x.shape(), 1, 0, 1, 1);
    auto dk = conv2d_backward_weights(cot, x, k.shape(), 1, 0, 1, 1);
    auto fx = fd_grad(
        [&](const Tensor<double>& xx) {
            return weighted_sum(conv2d_forward(xx, k, 1, 0, 1), cot);
        },
        x);
    auto fk = fd_grad(
        [&](const Tensor<double>& kk) {
            return weighted_sum(conv2d_forward(x, kk, 1, 0, 1), cot);
        },
        k);
    CHECK(max_rel_err(dx, fx) < 1e-4);
    CHECK(max_rel_err(dk, fk) < 1e-4);
}

TEST_CASE("batch_norm infer with unit stats is a 1/sqrt(1+eps) scale") {
    Rng rng(5);
    auto x = rand_tensor<double>({2, 3, 2, 4}, rng);
    Tensor<double> gamma({3}, 1.0), beta({3}), mean({3}), var({3}, 1.0);
    const double eps = 1e-3;
    auto y = batch_norm_forward<double>(x, gamma, beta, mean, var, Mode::kInfer, 0.1, eps);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y[i] == Catch::Approx(x[i] / std::sqrt(1.0 + eps)).margin(1e-12));
}

TEST_CASE("batch_norm train on constant input returns beta") {
    Tensor<double> x({2, 2, 1, 3}, 7.0);
    Tensor<double> gamma({2}, 1.5), beta({2}, {0.25, -0.5}), mean({2}), var({2}, 1.0);
    auto y = batch_norm_forward<double>(x, gamma, beta, mean, var, Mode::kTrain, 0.1, 1e-5);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c)
            for (int w = 0; w < 3; ++w)
                CHECK(y.at({b, c, 0, w}) == Catch::Approx(beta[static_cast<std::size_t>(c)]).margin(1e-12));
}

TEST_CASE("batch_norm train normalizes a +-1 channel to +-gamma") {
    // one channel holding [-1, 1]: batch mean 0, variance 1
    Tensor<double> x({2, 1, 1, 1});
    x[0] = -1.0;
    x[1] = 1.0;
    Tensor<double> gamma({1}, 2.0), beta({1}), mean({1}), var({1}, 1.0);
    auto y = batch_norm_forward<double>(x, gamma, beta, mean, var, Mode::kTrain, 0.1, 1e-10);
    CHECK(y[0] == Catch::Approx(-2.0).epsilon(1e-6));
    CHECK(y[1] == Catch::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("batch_norm updates running stats and rejects empty batches") {
    Tensor<double> x({2, 1, 1, 2}, {1.0, 1.0, 3.0, 3.0});
    Tensor<double> gamma({1}, 1.0), beta({1}), mean({1}), var({1}, 1.0);
    batch_norm_forward<double>(x, gamma, beta, mean, var, Mode::kTrain, 0.5, 1e-5);
    CHECK(mean[0] == Catch::Approx(0.5 * 0.0 + 0.5 * 2.0));  // batch mean 2
    CHECK(var[0] == Catch::Approx(0.5 * 1.0 + 0.5 * 1.0));   // batch var 1

    Tensor<double> empty({0, 1, 1, 2});
    REQUIRE_THROWS_AS(
        batch_norm_forward<double>(empty, gamma, beta, mean, var, Mode::kTrain, 0.1, 1e-5),
        std::runtime_error);
}

TEST_CASE("elu matches its closed form") {
    Tensor<double> x({1, 5}, {0.0, 2.5, -1.0, 1e-12, -1e-12});
    auto y = elu_forward<double>(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 2.5);
    CHECK(y[2] == Catch::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
    CHECK(std::abs(y[3]) < 1e-11);  // continuous at 0
    CHECK(std::abs(y[4]) < 1e-11);
    Rng rng(7);
    auto pos = rand_tensor<double>({3, 4}, rng, 0.0, 5.0);
    auto py = elu_forward<double>(pos);
    CHECK(testutil::max_abs_diff(pos, py) == 0.0);  // identity on non-negatives
}

TEST_CASE("elu backward at x=2 with unit cotangent is 1") {
    Tensor<double> x({1, 1}, {2.0});
    EluCtx<double> ctx;
    elu_forward<double>(x, 1.0, &ctx);
    Tensor<double> cot({1, 1}, {1.0});
    auto dx = elu_backward(ctx, cot);
    CHECK(dx[0] == 1.0);
}

TEST_CASE("avg_pool_time basics") {
    Tensor<double> x({1, 1, 1, 4}, {1, 2, 3, 4});
    auto y = avg_pool_time_forward(x, 2);
    REQUIRE(y.shape() == Shape({1, 1, 1, 2}));
    CHECK(y[0] == 1.5);
    CHECK(y[1] == 3.5);

    Tensor<double> x5({1, 1, 1, 5}, {1, 2, 3, 4, 5});
    auto y5 = avg_pool_time_forward(x5, 2);
    REQUIRE(y5.shape() == Shape({1, 1, 1, 2}));  // tail trimmed
    CHECK(y5[0] == 1.5);
    CHECK(y5[1] == 3.5);

    Tensor<double> c({2, 3, 1, 8}, 4.25);
    auto yc = avg_pool_time_forward(c, 4);
    for (std::size_t i = 0; i < yc.numel(); ++i) CHECK(yc[i] == 4.25);  // constant preserved exactly

    REQUIRE_THROWS_AS(avg_pool_time_forward(x, 0), std::invalid_argument);
}

TEST_CASE("dropout modes") {
    Rng rng(99);
    auto x = rand_tensor<float>({4, 25}, rng);

    Rng r1(5);
    auto infer = dropout_forward(x, 0.5, r1, Mode::kInfer);
    CHECK(testutil::max_abs_diff(x, infer) == 0.0);

    Rng r2(5);
    auto p0 = dropout_forward(x, 0.0, r2, Mode::kTrain);
    CHECK(testutil::max_abs_diff(x, p0) == 0.0);

    REQUIRE_THROWS_AS(dropout_forward(x, 1.0, r2, Mode::kTrain), std::invalid_argument);
    REQUIRE_THROWS_AS(dropout_forward(x, -0.1, r2, Mode::kTrain), std::invalid_argument);
}

TEST_CASE("dropout mask is seed-determined and unbiased over 1e5 elements") {
    Tensor<float> ones({100, 1000}, 1.0f);
    Rng ra(1234), rb(1234);
    auto a = dropout_forward(ones, 0.5, ra, Mode::kTrain);
    auto b = dropout_forward(ones, 0.5, rb, Mode::kTrain);
    CHECK(testutil::max_abs_diff(a, b) == 0.0);
    double mean = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) mean += a[i];
    mean /= static_cast<double>(a.numel());
    CHECK(mean == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("dense layer examples") {
    Tensor<double> w_id({2, 2}, {1, 0, 0, 1});
    Tensor<double> b0({2});
    Rng rng(55);
    auto x = rand_tensor<double>({3, 2}, rng);
    auto y = dense_forward(x, w_id, b0);
    CHECK(testutil::max_abs_diff(x, y) == 0.0);

    Tensor<double> x1({1, 2}, {1, 2});
    Tensor<double> w({2, 2}, {1, 1, 1, -1});
    auto y1 = dense_forward(x1, w, b0);
    CHECK(y1[0] == 3.0);
    CHECK(y1[1] == -1.0);

    Tensor<double> wz({2, 2});
    Tensor<double> b({2}, {0.5, -1.5});
    auto yb = dense_forward(x, wz, b);
    for (int r = 0; r < 3; ++r) {
        CHECK(yb.at({r, 0}) == 0.5);
        CHECK(yb.at({r, 1}) == -1.5);
    }

    Tensor<double> wbad({2, 3});
    REQUIRE_THROWS_AS(dense_forward(x, wbad, b0), std::invalid_argument);
}

TEST_CASE("dense backward dW equals cotangent^T * input") {
    Rng rng(77);
    auto x = rand_tensor<double>({3, 4}, rng);
    auto w = rand_tensor<double>({2, 4}, rng);
    auto cot = rand_tensor<double>({3, 2}, rng);
    auto g = dense_backward(cot, x, w);
    for (int k = 0; k < 2; ++k)
        for (int d = 0; d < 4; ++d) {
            double want = 0;
            for (int b = 0; b < 3; ++b) want += cot.at({b, k}) * x.at({b, d});
            CHECK(g.dweight.at({k, d}) == Catch::Approx(want).margin(1e-12));
        }
}

TEST_CASE("softmax cross-entropy examples") {
    Tensor<double> z({1, 2}, {0.0, 0.0});
    auto r = softmax_xent_forward(z, {0});
    CHECK(r.probs[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(r.probs[1] == Catch::Approx(0.5).margin(1e-15));
    CHECK(r.loss == Catch::Approx(std::log(2.0)).margin(1e-12));

    Tensor<double> z2({1, 2}, {10.0, -10.0});
    auto r2 = softmax_xent_forward(z2, {0});
    CHECK(r2.loss == Catch::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));
    CHECK(r2.loss == Catch::Approx(2.061e-9).epsilon(1e-3));

    REQUIRE_THROWS_WITH(softmax_xent_forward(z, {2}), Catch::Matchers::ContainsSubstring("label"));
    REQUIRE_THROWS_AS(softmax_xent_forward(z, {-1}), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(303);
    auto zf = rand_tensor<float>({8, 5}, rng, -30.0, 30.0);
    std::vector<int> labels(8, 0);
    auto rf = softmax_xent_forward(zf, labels);
    for (int b = 0; b < 8; ++b) {
        double s = 0;
        for (int k = 0; k < 5; ++k) s += rf.probs.at({b, k});
        CHECK(s == Catch::Approx(1.0).margin(1e-6));
    }
    auto zd = rand_tensor<double>({8, 5}, rng, -30.0, 30.0);
    auto rd = softmax_xent_forward(zd, labels);
    for (int b = 0; b < 8; ++b) {
        double s = 0;
        for (int k = 0; k < 5; ++k) s += rd.probs.at({b, k});
        CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("softmax gradient is (probs - one_hot)/B and matches finite differences") {
    Rng rng(404);
    auto z = rand_tensor<double>({4, 3}, rng, -2.0, 2.0);
    std::vector<int> labels = {0, 2, 1, 2};
    auto fwd = softmax_xent_forward(z, labels);
    auto dz = softmax_xent_backward(fwd, labels);
    for (int b = 0; b < 4; ++b)
        for (int k = 0; k < 3; ++k) {
            const double want =
                (fwd.probs.at({b, k}) - (labels[static_cast<std::size_t>(b)] == k ? 1.0 : 0.0)) / 4.0;
            CHECK(dz.at({b, k}) == Catch::Approx(want).margin(1e-12));
        }
    auto fd = fd_grad(
        [&](const Tensor<double>& zz) {
            return static_cast<double>(softmax_xent_forward(zz, labels).loss);
        },
        z);
    CHECK(max_rel_err(dz, fd) < 1e-4);
}
