#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "semd/checkpoint.hpp"
#include "semd/data.hpp"
#include "semd/preprocess.hpp"
#include "semd/train.hpp"

namespace semd {

// One JSON file configures a whole run: optional "preprocess", "arch",
// "train", and "synth" sections (missing fields keep their defaults) plus an
// optional top-level "seed" that overrides both the training seed and the
// synthesis master seed. The resolved config is written next to every
// command's outputs so a run can be reproduced from its artifacts alone.

/// A problem with the configuration itself (missing file, bad JSON, unknown
/// key), as opposed to bad data files or runtime failures.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    PreprocessConfig preprocess;
    ArchConfig arch;
    TrainConfig train;
    SynthConfig synth;
    bool seed_set = false;   // was a master seed given (file or flag)?
    std::uint64_t seed = 0;  // master seed; trumps the per-section seeds
    std::string out_dir;
};

/// A master seed pins every source of randomness in one place.
inline void set_master_seed(RunConfig& rc, std::uint64_t seed) {
    rc.seed = seed;
    rc.seed_set = true;
    rc.train.seed = seed;
    rc.synth.master_seed = seed;
}

namespace config_detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) known = true;
        if (!known) throw ConfigError("config: unknown key \"" + key + "\" in " + where);
    }
}

}  // namespace config_detail

inline nlohmann::json preprocess_to_json(const PreprocessConfig& c) {
    return nlohmann::json{{"bp_order", c.bp_order},
                          {"bp_lo_hz", c.bp_lo_hz},
                          {"bp_hi_hz", c.bp_hi_hz},
                          {"notch_enabled", c.notch_enabled},
                          {"notch_f0_hz", c.notch_f0_hz},
                          {"notch_q", c.notch_q},
                          {"epoch_start_s", c.epoch_start_s},
                          {"epoch_len_s", c.epoch_len_s}};
}

inline PreprocessConfig preprocess_from_json(const nlohmann::json& j) {
    config_detail::check_keys(j,
                              {"bp_order", "bp_lo_hz", "bp_hi_hz", "notch_enabled", "notch_f0_hz",
                               "notch_q", "epoch_start_s", "epoch_len_s"},
                              "preprocess");
    PreprocessConfig c;
    c.bp_order = j.value("bp_order", c.bp_order);
    c.bp_lo_hz = j.value("bp_lo_hz", c.bp_lo_hz);
    c.bp_hi_hz = j.value("bp_hi_hz", c.bp_hi_hz);
    c.notch_enabled = j.value("notch_enabled", c.notch_enabled);
    c.notch_f0_hz = j.value("notch_f0_hz", c.notch_f0_hz);
    c.notch_q = j.value("notch_q", c.notch_q);
    c.epoch_start_s = j.value("epoch_start_s", c.epoch_start_s);
    c.epoch_len_s = j.value("epoch_len_s", c.epoch_len_s);
    return c;
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
    return nlohmann::json{{"lr", c.lr},
                          {"batch", c.batch},
                          {"max_epochs", c.max_epochs},
                          {"patience", c.patience},
                          {"min_delta", c.min_delta},
                          {"min_epochs", c.min_epochs},
                          {"seed", c.seed},
                          {"shuffle", c.shuffle}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
    config_detail::check_keys(
        j, {"lr", "batch", "max_epochs", "patience", "min_delta", "min_epochs", "seed", "shuffle"},
        "train");
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.min_delta = j.value("min_delta", c.min_delta);
    c.min_epochs = j.value("min_epochs", c.min_epochs);
    c.seed = j.value("seed", c.seed);
    c.shuffle = j.value("shuffle", c.shuffle);
    return c;
}

inline nlohmann::json synth_to_json(const SynthConfig& c) {
    return nlohmann::json{{"n_subjects", c.n_subjects},
                          {"calibration_trials_per_class", c.calibration_trials_per_class},
                          {"online_trials_per_class", c.online_trials_per_class},
                          {"fs", c.fs},
                          {"trial_s", c.trial_s},
                          {"epoch_start_s", c.epoch_start_s},
                          {"epoch_s", c.epoch_s},
                          {"mu_hz", c.mu_hz},
                          {"mu_amp", c.mu_amp},
                          {"mu_ratio", c.mu_ratio},
                          {"noise_amp", c.noise_amp},
                          {"line_hz", c.line_hz},
                          {"line_amp", c.line_amp},
                          {"dc_min", c.dc_min},
                          {"dc_max", c.dc_max},
                          {"mix_strength", c.mix_strength},
                          {"montage", c.montage},
                          {"left_group", c.left_group},
                          {"right_group", c.right_group},
                          {"mixing_seed", c.mixing_seed},
                          {"master_seed", c.master_seed}};
}

inline SynthConfig synth_from_json(const nlohmann::json& j) {
    config_detail::check_keys(j,
                              {"n_subjects", "calibration_trials_per_class",
                               "online_trials_per_class", "fs", "trial_s", "epoch_start_s",
                               "epoch_s", "mu_hz", "mu_amp", "mu_ratio", "noise_amp", "line_hz",
                               "line_amp", "dc_min", "dc_max", "mix_strength", "montage",
                               "left_group", "right_group", "mixing_seed", "master_seed"},
                              "synth");
    SynthConfig c;
    c.n_subjects = j.value("n_subjects", c.n_subjects);
    c.calibration_trials_per_class =
        j.value("calibration_trials_per_class", c.calibration_trials_per_class);
    c.online_trials_per_class = j.value("online_trials_per_class", c.online_trials_per_class);
    c.fs = j.value("fs", c.fs);
    c.trial_s = j.value("trial_s", c.trial_s);
    c.epoch_start_s = j.value("epoch_start_s", c.epoch_start_s);
    c.epoch_s = j.value("epoch_s", c.epoch_s);
    c.mu_hz = j.value("mu_hz", c.mu_hz);
    c.mu_amp = j.value("mu_amp", c.mu_amp);
    c.mu_ratio = j.value("mu_ratio", c.mu_ratio);
    c.noise_amp = j.value("noise_amp", c.noise_amp);
    c.line_hz = j.value("line_hz", c.line_hz);
    c.line_amp = j.value("line_amp", c.line_amp);
    c.dc_min = j.value("dc_min", c.dc_min);
    c.dc_max = j.value("dc_max", c.dc_max);
    c.mix_strength = j.value("mix_strength", c.mix_strength);
    c.montage = j.value("montage", c.montage);
    c.left_group = j.value("left_group", c.left_group);
    c.right_group = j.value("right_group", c.right_group);
    c.mixing_seed = j.value("mixing_seed", c.mixing_seed);
    c.master_seed = j.value("master_seed", c.master_seed);
    return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
    nlohmann::json j{{"preprocess", preprocess_to_json(rc.preprocess)},
                     {"arch", arch_to_json(rc.arch)},
                     {"train", train_to_json(rc.train)},
                     {"synth", synth_to_json(rc.synth)},
                     {"out_dir", rc.out_dir}};
    if (rc.seed_set) j["seed"] = rc.seed;  // absent unless a master seed was given
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    config_detail::check_keys(j, {"preprocess", "arch", "train", "synth", "seed", "out_dir"},
                              "the config root");
    RunConfig rc;
    try {
        if (j.contains("preprocess")) rc.preprocess = preprocess_from_json(j.at("preprocess"));
        if (j.contains("arch")) rc.arch = arch_from_json(j.at("arch"));
        if (j.contains("train")) rc.train = train_from_json(j.at("train"));
        if (j.contains("synth")) rc.synth = synth_from_json(j.at("synth"));
        rc.out_dir = j.value("out_dir", rc.out_dir);
        if (j.contains("seed")) set_master_seed(rc, j.at("seed").get<std::uint64_t>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config file " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline std::string run_config_path(const std::string& dir) { return dir + "/run_config.json"; }

/// Writes the fully resolved configuration into an output directory so the
/// run can be reproduced from its artifacts.
inline void save_run_config(const RunConfig& rc, const std::string& dir) {
    const std::string path = run_config_path(dir);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << run_config_to_json(rc).dump(2) << '\n';
    if (!os) throw std::runtime_error("failed writing " + path);
}

}  // namespace semd
