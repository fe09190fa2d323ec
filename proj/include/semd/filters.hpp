#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace semd {

/// One second-order IIR section; the a0 coefficient is normalized to 1.
struct BiquadSection {
    double b0 = 0, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;
};

/// Cascade of biquads plus the design metadata it was built from.
struct BiquadCascade {
    std::vector<BiquadSection> sections;
    double fs = 0;
    std::string kind;  // "butter_bandpass" | "notch"
    int order = 0;     // analog design order
    double lo_hz = 0;  // corners (bandpass) or center (notch)
    double hi_hz = 0;
};

/// Largest pole magnitude of z^2 + a1 z + a2.
inline double section_pole_radius(const BiquadSection& s) {
    const double disc = s.a1 * s.a1 - 4.0 * s.a2;
    if (disc >= 0.0) {
        const double r = std::sqrt(disc);
        return std::max(std::abs((-s.a1 + r) * 0.5), std::abs((-s.a1 - r) * 0.5));
    }
    return std::sqrt(s.a2);  // conjugate pair: |p|^2 == a2
}

inline void validate_cascade(const BiquadCascade& c) {
    require(!c.sections.empty(), "filter cascade has no sections");
    require(c.fs > 0, "filter cascade has no sampling rate");
    for (std::size_t i = 0; i < c.sections.size(); ++i) {
        const BiquadSection& s = c.sections[i];
        for (double v : {s.b0, s.b1, s.b2, s.a1, s.a2})
            require(std::isfinite(v),
                    "filter section " + std::to_string(i) + " has non-finite coefficients");
        const double r = section_pole_radius(s);
        require(r < 1.0 - 1e-9, "filter section " + std::to_string(i) +
                                    " is unstable (pole radius " + std::to_string(r) + ")");
    }
}

/// H(e^{j 2 pi f / fs}) of the full cascade.
inline std::complex<double> freq_response(const BiquadCascade& c, double f_hz) {
    const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / c.fs);
    const std::complex<double> z2 = z1 * z1;
    std::complex<double> h(1.0, 0.0);
    for (const BiquadSection& s : c.sections)
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return h;
}

inline double magnitude_db(const BiquadCascade& c, double f_hz) {
    return 20.0 * std::log10(std::abs(freq_response(c, f_hz)));
}

/// Butterworth bandpass: analog prototype -> lowpass-to-bandpass substitution
/// -> bilinear transform with corner prewarping. Yields `order` second-order
/// sections (a digital filter of order 2*order), each with zeros at z = +1 and
/// z = -1, gain-normalized to 0 dB at the band center.
inline BiquadCascade design_butter_bandpass(int order, double lo_hz, double hi_hz, double fs) {
    require(order >= 1, "bandpass order must be >= 1, got " + std::to_string(order));
    require(fs > 0, "sampling rate must be positive");
    require(lo_hz > 0 && lo_hz < hi_hz && hi_hz < fs / 2,
            "bandpass corners must satisfy 0 < lo < hi < fs/2, got lo=" + std::to_string(lo_hz) +
                " hi=" + std::to_string(hi_hz) + " fs=" + std::to_string(fs));

    const double pi = std::numbers::pi;
    const double k = 2.0 * fs;  // bilinear constant
    const double wl = k * std::tan(pi * lo_hz / fs);
    const double wh = k * std::tan(pi * hi_hz / fs);
    const double w0 = std::sqrt(wl * wh);  // prewarped center
    const double bw = wh - wl;

    // Prototype poles sit on the unit circle in the left half-plane. The
    // substitution s -> (s^2 + w0^2) / (bw * s) turns each prototype pole p
    // into the two roots of s^2 - bw*p*s + w0^2 = 0.
    std::vector<std::complex<double>> dpoles;
    for (int m = 0; m < order; ++m) {
        const double theta = pi * (2.0 * m + order + 1.0) / (2.0 * order);
        const std::complex<double> p(std::cos(theta), std::sin(theta));
        const std::complex<double> half = 0.5 * bw * p;
        const std::complex<double> d = std::sqrt(half * half - w0 * w0);
        dpoles.push_back((k + (half + d)) / (k - (half + d)));  // bilinear transform
        dpoles.push_back((k + (half - d)) / (k - (half - d)));
    }

    // Pair poles into real-coefficient sections: each upper-half-plane pole
    // with its conjugate, leftover real poles with each other.
    std::vector<std::complex<double>> upper;
    std::vector<double> reals;
    for (const std::complex<double>& p : dpoles) {
        if (std::abs(p.imag()) < 1e-12 * std::max(1.0, std::abs(p.real())))
            reals.push_back(p.real());
        else if (p.imag() > 0)
            upper.push_back(p);
    }
    require(upper.size() * 2 + reals.size() == static_cast<std::size_t>(2 * order),
            "bandpass pole pairing failed");
    std::sort(upper.begin(), upper.end(), [](const std::complex<double>& a, const std::complex<double>& b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    std::sort(reals.begin(), reals.end());

    BiquadCascade c;
    c.fs = fs;
    c.kind = "butter_bandpass";
    c.order = order;
    c.lo_hz = lo_hz;
    c.hi_hz = hi_hz;
    for (const std::complex<double>& p : upper)
        c.sections.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
    for (std::size_t i = 0; i + 1 < reals.size(); i += 2)
        c.sections.push_back({1.0, 0.0, -1.0, -(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]});
    require(c.sections.size() == static_cast<std::size_t>(order), "bandpass section count mismatch");

    // Normalize to unit gain at the digital image of the analog band center.
    const double f_center = fs / pi * std::atan(w0 / k);
    const double g = std::abs(freq_response(c, f_center));
    require(std::isfinite(g) && g > 0, "bandpass gain normalization failed");
    const double per_section = std::pow(1.0 / g, 1.0 / static_cast<double>(c.sections.size()));
    for (BiquadSection& s : c.sections) {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    validate_cascade(c);
    return c;
}

/// Single-section IIR notch (constant-gain skirts, zeros on the unit circle
/// at +/- f0), bandwidth f0/q.
inline BiquadCascade design_notch(double f0_hz, double q, double fs) {
    require(fs > 0, "sampling rate must be positive");
    require(f0_hz > 0 && f0_hz < fs / 2, "notch frequency must satisfy 0 < f0 < fs/2, got f0=" +
                                             std::to_string(f0_hz) + " fs=" + std::to_string(fs));
    require(q > 0, "notch q must be positive, got " + std::to_string(q));

    const double w0 = 2.0 * std::numbers::pi * f0_hz / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;

    BiquadCascade c;
    c.fs = fs;
    c.kind = "notch";
    c.order = 2;
    c.lo_hz = c.hi_hz = f0_hz;
    c.sections.push_back({1.0 / a0, -2.0 * cw / a0, 1.0 / a0, -2.0 * cw / a0, (1.0 - alpha) / a0});
    validate_cascade(c);
    return c;
}

/// Causal direct-form-II-transposed filtering, per channel, zero initial
/// state. Inner arithmetic is double regardless of T.
template <typename T>
Tensor<T> apply_cascade(const Tensor<T>& signal, const BiquadCascade& filt) {
    require(signal.ndim() == 2,
            "apply_cascade expects a [channels, samples] tensor, got shape " + shape_str(signal.shape()));
    validate_cascade(filt);

    const int n_c = signal.dim(0);
    const int n_s = signal.dim(1);
    Tensor<T> out(signal.shape());
    std::vector<double> buf(static_cast<std::size_t>(n_s));
    for (int c = 0; c < n_c; ++c) {
        const T* src = signal.data() + static_cast<std::size_t>(c) * n_s;
        for (int t = 0; t < n_s; ++t) buf[static_cast<std::size_t>(t)] = static_cast<double>(src[t]);
        for (const BiquadSection& s : filt.sections) {
            double s1 = 0, s2 = 0;
            for (int t = 0; t < n_s; ++t) {
                const double x = buf[static_cast<std::size_t>(t)];
                const double y = s.b0 * x + s1;
                s1 = s.b1 * x - s.a1 * y + s2;
                s2 = s.b2 * x - s.a2 * y;
                buf[static_cast<std::size_t>(t)] = y;
            }
        }
        T* dst = out.data() + static_cast<std::size_t>(c) * n_s;
        for (int t = 0; t < n_s; ++t) {
            const double y = buf[static_cast<std::size_t>(t)];
            if (!std::isfinite(y))
                throw std::runtime_error("filter output is non-finite at channel " + std::to_string(c) +
                                         ", sample " + std::to_string(t));
            dst[t] = static_cast<T>(y);
        }
    }
    return out;
}

}  // namespace semd
