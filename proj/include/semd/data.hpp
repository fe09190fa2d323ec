#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bytes.hpp"
#include "dataset.hpp"
#include "tensor.hpp"

namespace semd {

// EEGT file layout (all integers and floats little-endian):
//   "EEGT"        4 bytes magic
//   u16           format version (1)
//   u16           n_channels
//   u32           n_samples
//   u32           n_trials
//   f32           sampling rate in Hz
//   n_trials      label bytes (0 left, 1 right)
//   per trial     channel-major f32 samples
// Montage names, subject id, and session tag travel in a "<path>.json"
// sidecar so the channel list stays editable metadata.

inline constexpr std::uint16_t kDataFileVersion = 1;

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

inline void write_dataset(const Dataset& ds, const std::string& path) {
    validate_dataset(ds);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open data file for writing: " + path);
    os.write("EEGT", 4);
    detail::put_u16(os, kDataFileVersion);
    detail::put_u16(os, static_cast<std::uint16_t>(ds.n_channels()));
    detail::put_u32(os, static_cast<std::uint32_t>(ds.n_samples()));
    detail::put_u32(os, static_cast<std::uint32_t>(ds.n_trials()));
    detail::put_f32(os, static_cast<float>(ds.fs));
    for (const Trial& t : ds.trials) os.put(static_cast<char>(t.label));
    for (const Trial& t : ds.trials) detail::put_f32_block(os, t.data.data(), t.data.numel());
    os.flush();
    if (!os) throw std::runtime_error("failed writing data file: " + path);

    const nlohmann::json side{
        {"montage", ds.montage}, {"subject", ds.subject}, {"session", ds.session}};
    std::ofstream js(sidecar_path(path));
    if (!js) throw std::runtime_error("cannot open sidecar for writing: " + sidecar_path(path));
    js << side.dump(2) << '\n';
    js.flush();
    if (!js) throw std::runtime_error("failed writing sidecar: " + sidecar_path(path));
}

inline Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open data file: " + path);

    char magic[4];
    if (!is.read(magic, 4)) throw std::runtime_error("truncated data file: missing magic");
    if (std::memcmp(magic, "EEGT", 4) != 0) throw std::runtime_error("bad data file magic in " + path);
    const std::uint16_t version = detail::take_u16(is, "data file: missing version");
    if (version != kDataFileVersion)
        throw std::runtime_error("unsupported data file version " + std::to_string(version) +
                                 " (expected " + std::to_string(kDataFileVersion) + ")");

    const int n_channels = detail::take_u16(is, "data file: missing channel count");
    const int n_samples = static_cast<int>(detail::take_u32(is, "data file: missing sample count"));
    const std::uint32_t n_trials = detail::take_u32(is, "data file: missing trial count");
    const float fs = detail::take_f32(is, "data file: missing sampling rate");

    std::vector<char> labels(n_trials);
    if (n_trials && !is.read(labels.data(), static_cast<std::streamsize>(n_trials)))
        throw std::runtime_error("truncated data file: missing labels");

    Dataset ds;
    ds.fs = fs;
    for (std::uint32_t i = 0; i < n_trials; ++i) {
        const int label = labels[i];
        if (label != 0 && label != 1)
            throw std::runtime_error("data file trial " + std::to_string(i) +
                                     " has label byte " + std::to_string(label));
        Trial t;
        t.label = label;
        t.data = Tensor<float>({n_channels, n_samples});
        detail::take_f32_block(is, t.data.data(), t.data.numel(),
                               "data file: missing samples of trial " + std::to_string(i));
        ds.trials.push_back(std::move(t));
    }
    is.peek();
    if (!is.eof()) throw std::runtime_error("data file has trailing bytes: " + path);

    std::ifstream js(sidecar_path(path));
    if (js) {
        try {
            const nlohmann::json side = nlohmann::json::parse(js);
            ds.montage = side.value("montage", std::vector<std::string>{});
            ds.subject = side.value("subject", 0);
            ds.session = side.value("session", std::string{});
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("malformed data sidecar " + sidecar_path(path) + ": " + e.what());
        }
    }
    validate_dataset(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic recordings: pink noise + DC offset + line hum on every channel,
// plus a mu-band burst during the imagery window whose amplitude on the
// left-hemisphere vs right-hemisphere electrode group depends on the class.

struct SynthConfig {
    int n_subjects = 20;
    int calibration_trials_per_class = 36;
    int online_trials_per_class = 24;
    double fs = 500.0;             // Hz
    double trial_s = 6.0;          // raw recording length per trial
    double epoch_start_s = 1.5;    // imagery window start within the trial
    double epoch_s = 4.0;          // imagery window length (mu burst active)
    double mu_hz = 10.0;           // burst carrier inside the 8-12 Hz band
    double mu_amp = 4.0;           // burst amplitude on the favored group
    double mu_ratio = 3.0;         // favored / suppressed amplitude asymmetry
    double noise_amp = 1.0;        // pink-noise scale
    double line_hz = 50.0;         // mains hum frequency
    double line_amp = 2.0;         // mains hum amplitude
    double dc_min = -5.0;          // per-channel DC offset range
    double dc_max = 5.0;
    double mix_strength = 0.15;    // off-diagonal scale of the spatial mixing
    std::vector<std::string> montage = default_montage();
    std::vector<std::string> left_group{"FC3", "C3", "CP1"};
    std::vector<std::string> right_group{"FC4", "C4", "CP4"};
    std::uint64_t mixing_seed = 101;  // per-subject spatial-mixing seed base
    std::uint64_t master_seed = 7;
};

inline void validate_synth(const SynthConfig& c) {
    require(c.n_subjects >= 1, "synth: n_subjects must be >= 1");
    require(c.calibration_trials_per_class >= 1 && c.online_trials_per_class >= 1,
            "synth: trial counts per class must be >= 1");
    require(c.fs > 0, "synth: sampling rate must be positive");
    require(c.trial_s > 0, "synth: trial length must be positive");
    require(c.epoch_start_s >= 0 && c.epoch_s > 0 &&
                c.epoch_start_s + c.epoch_s <= c.trial_s + 1e-9,
            "synth: imagery window must fit inside the trial");
    require(c.mu_hz > 0 && c.mu_hz < c.fs / 2, "synth: mu frequency must be below Nyquist");
    require(c.line_hz > 0 && c.line_hz < c.fs / 2, "synth: line frequency must be below Nyquist");
    require(c.mu_ratio > 1, "synth: mu_ratio must exceed 1 to separate the classes");
    require(c.mu_amp >= 0 && c.noise_amp >= 0 && c.line_amp >= 0,
            "synth: amplitudes must be non-negative");
    require(c.dc_max >= c.dc_min, "synth: DC offset range is inverted");
    require(c.mix_strength >= 0, "synth: mix_strength must be non-negative");
    require(!c.montage.empty(), "synth: montage is empty");
    require(!c.left_group.empty() && !c.right_group.empty(), "synth: electrode groups are empty");
}

namespace detail {

inline int montage_index(const std::vector<std::string>& montage, const std::string& name) {
    for (std::size_t i = 0; i < montage.size(); ++i)
        if (montage[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("synth: electrode " + name + " not in montage");
}

// Paul Kellet's three-pole 1/f approximation over unit white noise.
class PinkNoise {
public:
    explicit PinkNoise(Rng& rng) : rng_(rng) {}
    double next() {
        const double w = rng_.normal();
        b0_ = 0.99765 * b0_ + w * 0.0990460;
        b1_ = 0.96300 * b1_ + w * 0.2965164;
        b2_ = 0.57000 * b2_ + w * 1.0526913;
        return (b0_ + b1_ + b2_ + w * 0.1848) / 3.0;
    }

private:
    Rng& rng_;
    double b0_ = 0, b1_ = 0, b2_ = 0;
};

}  // namespace detail

/// Per-subject channel mixing: identity plus a seeded random leak between
/// channels, scaled by mix_strength.
inline Tensor<double> spatial_mixing(const SynthConfig& cfg, int subject) {
    validate_synth(cfg);
    const int n = static_cast<int>(cfg.montage.size());
    Rng rng(mix_seed(cfg.mixing_seed, static_cast<std::uint64_t>(subject)));
    Tensor<double> m({n, n});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            m.at({r, c}) = (r == c ? 1.0 : cfg.mix_strength * rng.normal());
    return m;
}

/// Both sessions of one subject (1-based id), fully determined by the config.
struct SubjectRecording {
    Dataset calibration;
    Dataset online;
};

inline SubjectRecording synth_subject(const SynthConfig& cfg, int subject) {
    validate_synth(cfg);
    require(subject >= 1 && subject <= cfg.n_subjects,
            "synth: subject id " + std::to_string(subject) + " outside 1.." +
                std::to_string(cfg.n_subjects));

    const int n_ch = static_cast<int>(cfg.montage.size());
    const int n_samp = static_cast<int>(std::lround(cfg.trial_s * cfg.fs));
    const int burst_lo = static_cast<int>(std::lround(cfg.epoch_start_s * cfg.fs));
    const int burst_hi = burst_lo + static_cast<int>(std::lround(cfg.epoch_s * cfg.fs));
    const int ramp = static_cast<int>(std::lround(0.25 * cfg.fs));

    std::vector<int> left_idx, right_idx;
    for (const std::string& name : cfg.left_group)
        left_idx.push_back(detail::montage_index(cfg.montage, name));
    for (const std::string& name : cfg.right_group)
        right_idx.push_back(detail::montage_index(cfg.montage, name));

    const Tensor<double> mixing = spatial_mixing(cfg, subject);
    const double pi = std::acos(-1.0);
    const double two_pi = 2.0 * pi;

    SubjectRecording rec;
    for (int session = 0; session < 2; ++session) {
        const int per_class =
            session == 0 ? cfg.calibration_trials_per_class : cfg.online_trials_per_class;
        Rng rng(mix_seed(cfg.master_seed,
                         static_cast<std::uint64_t>(subject) * 2 + static_cast<std::uint64_t>(session)));

        std::vector<int> labels(static_cast<std::size_t>(2 * per_class));
        for (int i = 0; i < per_class; ++i) {
            labels[static_cast<std::size_t>(2 * i)] = kLabelLeft;
            labels[static_cast<std::size_t>(2 * i + 1)] = kLabelRight;
        }
        rng.shuffle(labels.begin(), labels.end());

        Dataset ds;
        ds.fs = cfg.fs;
        ds.subject = subject;
        ds.session = session == 0 ? "calibration" : "online";
        ds.montage = cfg.montage;

        Tensor<double> src({n_ch, n_samp});
        for (int label : labels) {
            src.fill(0);
            const double line_phase = rng.uniform(0.0, two_pi);
            for (int c = 0; c < n_ch; ++c) {
                double* row = src.data() + static_cast<std::size_t>(c) * n_samp;
                const double dc = rng.uniform(cfg.dc_min, cfg.dc_max);
                const double line_gain = cfg.line_amp * rng.uniform(0.8, 1.2);

                double mu_amp = 0.0;
                bool in_left = false, in_right = false;
                for (int i : left_idx) in_left = in_left || i == c;
                for (int i : right_idx) in_right = in_right || i == c;
                if (in_left) mu_amp = label == kLabelLeft ? cfg.mu_amp : cfg.mu_amp / cfg.mu_ratio;
                if (in_right) mu_amp = label == kLabelRight ? cfg.mu_amp : cfg.mu_amp / cfg.mu_ratio;
                const double mu_phase = rng.uniform(0.0, two_pi);

                detail::PinkNoise pink(rng);
                for (int t = 0; t < n_samp; ++t) {
                    double v = dc + cfg.noise_amp * pink.next() +
                               line_gain * std::sin(two_pi * cfg.line_hz * t / cfg.fs + line_phase);
                    if (mu_amp > 0 && t >= burst_lo && t < burst_hi) {
                        const int into = t - burst_lo;
                        const int left_in_burst = burst_hi - 1 - t;
                        double env = 1.0;
                        if (ramp > 0) {
                            const double edge =
                                std::min({1.0, into / static_cast<double>(ramp),
                                          left_in_burst / static_cast<double>(ramp)});
                            const double s = std::sin(edge * pi / 2.0);
                            env = s * s;
                        }
                        v += mu_amp * env * std::sin(two_pi * cfg.mu_hz * t / cfg.fs + mu_phase);
                    }
                    row[t] = v;
                }
            }

            Trial trial;
            trial.label = label;
            trial.data = Tensor<float>({n_ch, n_samp});
            if (cfg.mix_strength == 0) {
                for (std::size_t i = 0; i < src.numel(); ++i)
                    trial.data[i] = static_cast<float>(src[i]);
            } else {
                for (int c = 0; c < n_ch; ++c) {
                    const double* mrow = mixing.data() + static_cast<std::size_t>(c) * n_ch;
                    float* out = trial.data.data() + static_cast<std::size_t>(c) * n_samp;
                    for (int t = 0; t < n_samp; ++t) {
                        double acc = 0;
                        for (int k = 0; k < n_ch; ++k)
                            acc += mrow[k] * src[static_cast<std::size_t>(k) * n_samp + t];
                        out[t] = static_cast<float>(acc);
                    }
                }
            }
            ds.trials.push_back(std::move(trial));
        }
        (session == 0 ? rec.calibration : rec.online) = std::move(ds);
    }
    return rec;
}

inline std::map<int, SubjectRecording> synth_generate(const SynthConfig& cfg) {
    validate_synth(cfg);
    std::map<int, SubjectRecording> out;
    for (int s = 1; s <= cfg.n_subjects; ++s) out[s] = synth_subject(cfg, s);
    return out;
}

// ---------------------------------------------------------------------------
// Protocol split: the first block of subjects contributes calibration data to
// the subject-independent base model; everyone else is fine-tuned on their
// own calibration session and evaluated on their online session.

struct ProtocolSplit {
    std::vector<int> pool;    // base-model training subjects (calibration only)
    std::vector<int> roster;  // fine-tune + evaluation subjects
};

inline ProtocolSplit protocol_split(const std::vector<int>& subjects, double pool_fraction = 0.35) {
    require(subjects.size() >= 2, "protocol_split: need at least 2 subjects");
    require(pool_fraction > 0 && pool_fraction < 1, "protocol_split: pool fraction must be in (0,1)");
    const int n = static_cast<int>(subjects.size());
    int k = static_cast<int>(std::lround(pool_fraction * n));
    k = std::max(1, std::min(n - 1, k));
    ProtocolSplit split;
    split.pool.assign(subjects.begin(), subjects.begin() + k);
    split.roster.assign(subjects.begin() + k, subjects.end());
    return split;
}

/// Concatenate the calibration sessions of the given subjects into one
/// training set. Shapes, rates, and montages must agree.
inline Dataset pool_calibration(const std::map<int, SubjectRecording>& recordings,
                                const std::vector<int>& subjects) {
    require(!subjects.empty(), "pool_calibration: no subjects given");
    Dataset pooled;
    pooled.subject = 0;
    pooled.session = "calibration";
    for (int id : subjects) {
        const auto it = recordings.find(id);
        require(it != recordings.end(), "pool_calibration: subject " + std::to_string(id) +
                                            " has no recording");
        const Dataset& cal = it->second.calibration;
        if (pooled.trials.empty()) {
            pooled.fs = cal.fs;
            pooled.montage = cal.montage;
        } else {
            require(cal.fs == pooled.fs, "pool_calibration: sampling rates differ");
            require(cal.montage == pooled.montage, "pool_calibration: montages differ");
            require(cal.trials.empty() ||
                        cal.trials[0].data.shape() == pooled.trials[0].data.shape(),
                    "pool_calibration: trial shapes differ");
        }
        pooled.trials.insert(pooled.trials.end(), cal.trials.begin(), cal.trials.end());
    }
    validate_dataset(pooled);
    return pooled;
}

}  // namespace semd
