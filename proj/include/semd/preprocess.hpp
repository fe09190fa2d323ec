#pragma once

#include <cmath>
#include <string>

#include "dataset.hpp"
#include "filters.hpp"
#include "tensor.hpp"

namespace semd {

struct PreprocessConfig {
    int bp_order = 5;
    double bp_lo_hz = 0.5;
    double bp_hi_hz = 90.0;
    bool notch_enabled = true;
    double notch_f0_hz = 50.0;
    double notch_q = 30.0;
    double epoch_start_s = 1.5;  // MI-cue onset within the raw recording
    double epoch_len_s = 4.0;    // MI window
};

/// Subtract each channel's own mean over the epoch.
template <typename T>
Tensor<T> baseline_correct(const Tensor<T>& trial) {
    require(trial.ndim() == 2,
            "baseline_correct expects a [channels, samples] tensor, got shape " + shape_str(trial.shape()));
    const int n_c = trial.dim(0);
    const int n_s = trial.dim(1);
    require(n_s >= 1, "baseline_correct needs at least one sample");

    Tensor<T> out(trial.shape());
    for (int c = 0; c < n_c; ++c) {
        const T* src = trial.data() + static_cast<std::size_t>(c) * n_s;
        double sum = 0;
        for (int t = 0; t < n_s; ++t) sum += static_cast<double>(src[t]);
        const double mean = sum / n_s;
        T* dst = out.data() + static_cast<std::size_t>(c) * n_s;
        for (int t = 0; t < n_s; ++t) dst[t] = static_cast<T>(static_cast<double>(src[t]) - mean);
    }
    return out;
}

/// Common average reference: at each sample, subtract the cross-channel mean
/// from every channel.
template <typename T>
Tensor<T> car(const Tensor<T>& trial) {
    require(trial.ndim() == 2,
            "car expects a [channels, samples] tensor, got shape " + shape_str(trial.shape()));
    const int n_c = trial.dim(0);
    const int n_s = trial.dim(1);
    require(n_c >= 2, "car needs at least two channels, got " + std::to_string(n_c));

    Tensor<T> out(trial.shape());
    for (int t = 0; t < n_s; ++t) {
        double sum = 0;
        for (int c = 0; c < n_c; ++c)
            sum += static_cast<double>(trial.data()[static_cast<std::size_t>(c) * n_s + t]);
        const double mean = sum / n_c;
        for (int c = 0; c < n_c; ++c) {
            const std::size_t i = static_cast<std::size_t>(c) * n_s + t;
            out.data()[i] = static_cast<T>(static_cast<double>(trial.data()[i]) - mean);
        }
    }
    return out;
}

/// Full conditioning chain: bandpass -> notch -> baseline -> CAR, then the MI
/// epoch. The baseline window is the MI epoch itself and both baseline and CAR
/// are per-channel / per-sample linear maps, so extracting the epoch right
/// after filtering gives bit-identical results and avoids referencing samples
/// that are thrown away anyway. Internal arithmetic is double end to end; the
/// result is cast to f32 once at the end.
inline Trial preprocess_trial(const RawTrial& raw, const PreprocessConfig& cfg = {}) {
    require(raw.data.ndim() == 2,
            "raw trial must be a [channels, samples] tensor, got shape " + shape_str(raw.data.shape()));
    require(raw.fs > 0, "raw trial sampling rate must be positive");
    require(cfg.epoch_start_s >= 0 && cfg.epoch_len_s > 0, "epoch window must be non-negative start, positive length");
    require_finite(raw.data, "raw trial");

    const int n_s_raw = raw.data.dim(1);
    const int start = static_cast<int>(std::lround(cfg.epoch_start_s * raw.fs));
    const int n_epoch = static_cast<int>(std::lround(cfg.epoch_len_s * raw.fs));
    if (start + n_epoch > n_s_raw)
        throw std::runtime_error("raw trial too short: need " + std::to_string(start + n_epoch) +
                                 " samples for a " + std::to_string(cfg.epoch_len_s) + " s epoch at " +
                                 std::to_string(cfg.epoch_start_s) + " s, got " + std::to_string(n_s_raw));

    Tensor<double> x = raw.data.cast<double>();
    x = apply_cascade(x, design_butter_bandpass(cfg.bp_order, cfg.bp_lo_hz, cfg.bp_hi_hz, raw.fs));
    if (cfg.notch_enabled) x = apply_cascade(x, design_notch(cfg.notch_f0_hz, cfg.notch_q, raw.fs));

    const int n_c = x.dim(0);
    Tensor<double> epoch({n_c, n_epoch});
    for (int c = 0; c < n_c; ++c)
        for (int t = 0; t < n_epoch; ++t)
            epoch.at({c, t}) = x.at({c, start + t});

    epoch = baseline_correct(epoch);
    epoch = car(epoch);
    require_finite(epoch, "preprocessed trial");

    Trial out;
    out.data = epoch.cast<float>();
    out.label = raw.label;
    return out;
}

/// Apply the chain to every trial of a raw dataset.
inline Dataset preprocess_dataset(const Dataset& raw, const PreprocessConfig& cfg = {}) {
    validate_dataset(raw);
    Dataset out;
    out.montage = raw.montage;
    out.fs = raw.fs;
    out.subject = raw.subject;
    out.session = raw.session;
    out.trials.reserve(raw.trials.size());
    for (const Trial& t : raw.trials) {
        RawTrial rt;
        rt.data = t.data;
        rt.fs = raw.fs;
        rt.label = t.label;
        rt.subject = raw.subject;
        rt.session = raw.session;
        out.trials.push_back(preprocess_trial(rt, cfg));
    }
    return out;
}

}  // namespace semd
