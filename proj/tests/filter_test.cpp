#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>

#include "semd/filters.hpp"
#include "test_util.hpp"

using namespace semd;

namespace {

// Closed-form magnitude of the analog Butterworth bandpass seen through the
// bilinear warp: |H(f)| = 1 / sqrt(1 + W^(2*order)) where W is the prototype
// frequency the digital frequency f maps to. Independent of the coefficient
// pipeline under test.
double butter_bandpass_db_oracle(int order, double lo_hz, double hi_hz, double fs, double f_hz) {
    const double pi = std::numbers::pi;
    const double k = 2.0 * fs;
    const double wl = k * std::tan(pi * lo_hz / fs);
    const double wh = k * std::tan(pi * hi_hz / fs);
    const double w0sq = wl * wh;
    const double bw = wh - wl;
    const double w = k * std::tan(pi * f_hz / fs);  // analog frequency of f via the inverse warp
    const double w_proto = std::abs((w * w - w0sq) / (bw * w));
    return -10.0 * std::log10(1.0 + std::pow(w_proto, 2ll * order));
}

// Amplitude of a steady-state sinusoid from its tail RMS over whole periods.
double tail_amplitude(const Tensor<double>& y, int n_tail) {
    const int n = y.dim(1);
    double ssq = 0;
    for (int t = n - n_tail; t < n; ++t) ssq += y.at({0, t}) * y.at({0, t});
    return std::sqrt(2.0 * ssq / n_tail);
}

Tensor<double> sinusoid(double f_hz, double fs, int n) {
    Tensor<double> x({1, n});
    for (int t = 0; t < n; ++t) x.at({0, t}) = std::sin(2.0 * std::numbers::pi * f_hz * t / fs);
    return x;
}

}  // namespace

TEST_CASE("butterworth bandpass meets the response targets") {
    const BiquadCascade bp = design_butter_bandpass(5, 0.5, 90.0, 500.0);

    REQUIRE(bp.sections.size() == 5);
    for (const BiquadSection& s : bp.sections) CHECK(section_pole_radius(s) < 1.0 - 1e-9);

    // -3 dB at both corners, steep skirt one octave above the top corner
    CHECK(magnitude_db(bp, 0.5) == Catch::Approx(-3.0).margin(0.5));
    CHECK(magnitude_db(bp, 90.0) == Catch::Approx(-3.0).margin(0.5));
    CHECK(magnitude_db(bp, 180.0) <= -25.0);

    // geometric-mean frequency sits within 1 dB of the passband max
    double max_db = -1e30;
    for (double f = 0.5; f <= 90.0; f += 0.25) max_db = std::max(max_db, magnitude_db(bp, f));
    CHECK(magnitude_db(bp, std::sqrt(0.5 * 90.0)) >= max_db - 1.0);

    // zeros pinned at DC and Nyquist (DC is exact; Nyquist up to the rounding
    // of e^{-j pi})
    CHECK(std::abs(freq_response(bp, 0.0)) == 0.0);
    CHECK(std::abs(freq_response(bp, 250.0)) <= 1e-12);
}

TEST_CASE("bandpass magnitude matches the closed-form butterworth oracle") {
    const BiquadCascade bp = design_butter_bandpass(5, 0.5, 90.0, 500.0);
    for (double f : {0.3, 0.5, 1.0, 5.0, 6.7082, 10.0, 30.0, 60.0, 80.0, 90.0, 120.0, 180.0, 240.0}) {
        const double expected = butter_bandpass_db_oracle(5, 0.5, 90.0, 500.0, f);
        CHECK(magnitude_db(bp, f) == Catch::Approx(expected).margin(1e-6));
    }
    // a different design point to make sure nothing is tuned to the defaults
    const BiquadCascade other = design_butter_bandpass(3, 4.0, 40.0, 250.0);
    REQUIRE(other.sections.size() == 3);
    for (double f : {2.0, 4.0, 12.6, 40.0, 80.0, 110.0}) {
        const double expected = butter_bandpass_db_oracle(3, 4.0, 40.0, 250.0, f);
        CHECK(magnitude_db(other, f) == Catch::Approx(expected).margin(1e-6));
    }
}

TEST_CASE("bandpass rejects out-of-range corners") {
    CHECK_THROWS_AS(design_butter_bandpass(5, 0.0, 90.0, 500.0), std::invalid_argument);
    CHECK_THROWS_AS(design_butter_bandpass(5, -1.0, 90.0, 500.0), std::invalid_argument);
    CHECK_THROWS_AS(design_butter_bandpass(5, 90.0, 0.5, 500.0), std::invalid_argument);
    CHECK_THROWS_AS(design_butter_bandpass(5, 0.5, 250.0, 500.0), std::invalid_argument);
    CHECK_THROWS_AS(design_butter_bandpass(0, 0.5, 90.0, 500.0), std::invalid_argument);
}

TEST_CASE("notch meets the response targets") {
    const BiquadCascade nf = design_notch(50.0, 30.0, 500.0);

    REQUIRE(nf.sections.size() == 1);
    CHECK(section_pole_radius(nf.sections[0]) < 1.0 - 1e-9);

    CHECK(magnitude_db(nf, 50.0) <= -30.0);
    CHECK(magnitude_db(nf, 45.0) >= -1.0);
    CHECK(magnitude_db(nf, 55.0) >= -1.0);
    CHECK(magnitude_db(nf, 0.0) == Catch::Approx(0.0).margin(1e-6));

    CHECK_THROWS_AS(design_notch(0.0, 30.0, 500.0), std::invalid_argument);
    CHECK_THROWS_AS(design_notch(300.0, 30.0, 500.0), std::invalid_argument);
    CHECK_THROWS_AS(design_notch(50.0, 0.0, 500.0), std::invalid_argument);
    CHECK_THROWS_AS(design_notch(50.0, -2.0, 500.0), std::invalid_argument);
}

TEST_CASE("apply_cascade basics: zeros, identity, linearity, determinism") {
    const BiquadCascade bp = design_butter_bandpass(5, 0.5, 90.0, 500.0);

    Tensor<double> zeros({3, 400});
    const Tensor<double> fz = apply_cascade(zeros, bp);
    for (std::size_t i = 0; i < fz.numel(); ++i) CHECK(fz[i] == 0.0);

    // unit impulse through an identity section passes through untouched
    BiquadCascade ident;
    ident.fs = 500.0;
    ident.kind = "identity";
    ident.sections.push_back({1.0, 0.0, 0.0, 0.0, 0.0});
    Tensor<double> impulse({1, 16});
    impulse.at({0, 0}) = 1.0;
    const Tensor<double> fi = apply_cascade(impulse, ident);
    for (std::size_t i = 0; i < fi.numel(); ++i) CHECK(fi[i] == impulse[i]);

    // linearity within 1e-6 relative
    Rng rng(404);
    const auto x = testutil::rand_tensor<double>({4, 600}, rng);
    Tensor<double> ax = x;
    const double a = -2.5;
    for (std::size_t i = 0; i < ax.numel(); ++i) ax[i] *= a;
    const Tensor<double> f_ax = apply_cascade(ax, bp);
    Tensor<double> a_fx = apply_cascade(x, bp);
    double scale = 0;
    for (std::size_t i = 0; i < a_fx.numel(); ++i) {
        a_fx[i] *= a;
        scale = std::max(scale, std::abs(a_fx[i]));
    }
    CHECK(testutil::max_abs_diff(f_ax, a_fx) <= 1e-6 * scale);

    // same input, same output, bit for bit
    const Tensor<double> again = apply_cascade(x, bp);
    const Tensor<double> first = apply_cascade(x, bp);
    CHECK(testutil::max_abs_diff(again, first) == 0.0);
}

TEST_CASE("steady-state sinusoids match the frequency-response oracle") {
    const double fs = 500.0;
    const BiquadCascade nf = design_notch(50.0, 30.0, fs);

    // at the notch center the zero sits on the unit circle: |H| == 0, so the
    // tail amplitude must collapse to transient residue
    const Tensor<double> y50 = apply_cascade(sinusoid(50.0, fs, 3000), nf);
    CHECK(std::abs(freq_response(nf, 50.0)) <= 1e-12);
    CHECK(tail_amplitude(y50, 1000) <= 1e-4);

    // just off-center the response is finite; measured amplitude within 5%
    const Tensor<double> y45 = apply_cascade(sinusoid(45.0, fs, 6000), nf);
    const double h45 = std::abs(freq_response(nf, 45.0));
    CHECK(tail_amplitude(y45, 1000) == Catch::Approx(h45).epsilon(0.05));

    // passband tone through the bandpass
    const BiquadCascade bp = design_butter_bandpass(5, 0.5, 90.0, fs);
    const Tensor<double> y10 = apply_cascade(sinusoid(10.0, fs, 10000), bp);
    const double h10 = std::abs(freq_response(bp, 10.0));
    CHECK(tail_amplitude(y10, 1000) == Catch::Approx(h10).epsilon(0.05));
}

TEST_CASE("apply_cascade rejects bad cascades and shapes") {
    const BiquadCascade bp = design_butter_bandpass(5, 0.5, 90.0, 500.0);
    Tensor<double> flat({8});
    CHECK_THROWS_WITH(apply_cascade(flat, bp), Catch::Matchers::ContainsSubstring("[channels, samples]"));

    BiquadCascade unstable;
    unstable.fs = 500.0;
    unstable.sections.push_back({1.0, 0.0, 0.0, -2.2, 1.21});  // double pole at z = 1.1
    Tensor<double> x({1, 8}, 1.0);
    CHECK_THROWS_WITH(apply_cascade(x, unstable), Catch::Matchers::ContainsSubstring("unstable"));

    BiquadCascade corrupt;
    corrupt.fs = 500.0;
    corrupt.sections.push_back({std::nan(""), 0.0, 0.0, 0.0, 0.0});
    CHECK_THROWS_WITH(apply_cascade(x, corrupt), Catch::Matchers::ContainsSubstring("non-finite"));
}
