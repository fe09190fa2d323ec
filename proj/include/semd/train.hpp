#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "semd/dataset.hpp"
#include "semd/model.hpp"
#include "semd/optim.hpp"

namespace semd {

// ---------------------------------------------------------------------------
// Training configuration and early stopping.

struct TrainConfig {
    double lr = 1e-4;
    int batch = 32;
    int max_epochs = 1000;
    int patience = 30;        // epochs without improvement before stopping
    double min_delta = 1e-3;  // improvement smaller than this does not count
    int min_epochs = 100;     // no early stop before this many epochs
    std::uint64_t seed = 0;   // drives shuffling and dropout, reseeded per epoch
    bool shuffle = true;
};

/// patience = 0 together with min_epochs = 0 is the deliberate "zero-epoch"
/// edge: the stop rule already holds before the first update, so fine-tuning
/// returns the starting model untouched.
inline void validate_train(const TrainConfig& c) {
    require(c.lr > 0, "train: lr must be > 0");
    require(c.batch >= 1, "train: batch must be >= 1");
    require(c.max_epochs >= 0, "train: max_epochs must be >= 0");
    require(c.patience >= 0, "train: patience must be >= 0");
    require(c.min_delta >= 0, "train: min_delta must be >= 0");
    require(c.min_epochs >= 0, "train: min_epochs must be >= 0");
    require(c.min_epochs <= c.max_epochs,
            "train: min_epochs " + std::to_string(c.min_epochs) + " exceeds max_epochs " +
                std::to_string(c.max_epochs));
}

namespace detail {
// The stop rule at the end of epoch e (1-based; e = 0 means "before any
// update"): enough epochs have run and the best epoch is at least `patience`
// epochs in the past.
inline bool stop_rule(int e, int best_epoch, const TrainConfig& cfg) {
    return e >= cfg.min_epochs && e - best_epoch >= cfg.patience;
}
}  // namespace detail

/// Pure early-stop decision after `losses.size()` completed epochs, given the
/// epoch whose loss last improved on the running best by more than min_delta.
inline bool early_stop_check(const std::vector<double>& losses, int best_epoch,
                             const TrainConfig& cfg) {
    require(!losses.empty(), "early_stop_check: empty loss history");
    return detail::stop_rule(static_cast<int>(losses.size()), best_epoch, cfg);
}

/// Replays the full best-loss bookkeeping over a loss curve: the epoch
/// training would stop after, or 0 if the curve ends without a stop.
inline int replay_early_stop(const std::vector<double>& losses, const TrainConfig& cfg) {
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (int e = 1; e <= static_cast<int>(losses.size()); ++e) {
        const double loss = losses[static_cast<std::size_t>(e - 1)];
        if (loss < best - cfg.min_delta) {
            best = loss;
            best_epoch = e;
        }
        if (detail::stop_rule(e, best_epoch, cfg)) return e;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Fine-tuning variants.

enum class FinetuneVariant {
    kContinueAll,     // every parameter keeps training
    kDenseOnly,       // classifier only
    kElecSeDense,     // both electrode SE gates + classifier
    kElecMapSeDense,  // all SE gates + classifier
};

inline const char* variant_name(FinetuneVariant v) {
    switch (v) {
        case FinetuneVariant::kContinueAll: return "continue-all";
        case FinetuneVariant::kDenseOnly: return "dense";
        case FinetuneVariant::kElecSeDense: return "elec-dense";
        case FinetuneVariant::kElecMapSeDense: return "elec-map-dense";
    }
    throw std::logic_error("variant_name: bad enum value");
}

inline FinetuneVariant parse_variant(const std::string& name) {
    if (name == "continue-all") return FinetuneVariant::kContinueAll;
    if (name == "dense") return FinetuneVariant::kDenseOnly;
    if (name == "elec-dense") return FinetuneVariant::kElecSeDense;
    if (name == "elec-map-dense") return FinetuneVariant::kElecMapSeDense;
    throw std::invalid_argument("unknown fine-tune variant '" + name +
                                "' (expected continue-all, dense, elec-dense, or elec-map-dense)");
}

/// Parameter names a variant would train, independent of the architecture.
inline std::vector<std::string> variant_param_names(FinetuneVariant v) {
    std::vector<std::string> names{"fc.w", "fc.b"};
    switch (v) {
        case FinetuneVariant::kDenseOnly:
            return names;
        case FinetuneVariant::kElecSeDense:
            names.insert(names.end(), {"se_in.w1", "se_in.w2", "se_post.w1", "se_post.w2"});
            return names;
        case FinetuneVariant::kElecMapSeDense:
            names.insert(names.end(),
                         {"se_in.w1", "se_in.w2", "se_post.w1", "se_post.w2", "se_map1.w1",
                          "se_map1.w2", "se_map2.w1", "se_map2.w2", "se_map3.w1", "se_map3.w2"});
            return names;
        case FinetuneVariant::kContinueAll:
            break;
    }
    names.clear();
    ModelState<float> probe;  // names only; tensors stay empty
    for_each_param(probe, [&](const char* name, const Tensor<float>&) { names.emplace_back(name); });
    return names;
}

/// Whether the stage owning a parameter participates in the forward pass.
/// SE tensors are always allocated (seeds pin every weight), but a disabled
/// stage never sees data, so training its weights would be a no-op.
inline bool param_stage_enabled(const std::string& name, const ArchConfig& cfg) {
    if (name.rfind("se_in.", 0) == 0) return cfg.se_input;
    if (name.rfind("se_post.", 0) == 0) return cfg.se_post_conv1;
    if (name.rfind("se_map1.", 0) == 0) return cfg.se_map1;
    if (name.rfind("se_map2.", 0) == 0) return cfg.se_map2;
    if (name.rfind("se_map3.", 0) == 0) return cfg.se_map3;
    return true;
}

/// The subset of a model's parameters a variant trains; parameters of
/// disabled SE stages drop out.
template <typename T>
std::vector<std::string> trainable_partition(const ModelState<T>& m, FinetuneVariant v) {
    const std::vector<std::string> wanted = variant_param_names(v);
    std::vector<std::string> out;
    for_each_param(m, [&](const char* name, const Tensor<T>&) {
        if (param_stage_enabled(name, m.cfg) &&
            std::find(wanted.begin(), wanted.end(), name) != wanted.end())
            out.emplace_back(name);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reports.

struct TrainReport {
    std::vector<double> epoch_loss;  // mean batch loss per completed epoch
    int stop_epoch = 0;              // == epoch_loss.size()
    std::string stop_reason;         // "early_stop" | "max_epochs"
    double wall_s = 0.0;
    double train_accuracy = 0.0;  // on the training data, final weights
};

inline void write_loss_csv(const TrainReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open loss csv for writing: " + path);
    out << "epoch,loss\n" << std::setprecision(12);
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
        out << e + 1 << ',' << r.epoch_loss[e] << '\n';
    if (!out) throw std::runtime_error("failed writing loss csv: " + path);
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalResult {
    int n_trials = 0;
    double accuracy = 0.0;
    std::array<double, 2> class_accuracy{};         // [left, right]; 0 when a class is absent
    std::array<std::array<long, 2>, 2> confusion{};  // [true label][predicted]
};

template <typename T>
EvalResult evaluate(const ModelState<T>& m, const Dataset& ds) {
    require(!ds.trials.empty(), "evaluate: empty dataset");
    const std::vector<int> pred = predict_dataset(m, ds);
    EvalResult r;
    r.n_trials = ds.n_trials();
    long correct = 0;
    std::array<long, 2> hits{}, totals{};
    for (std::size_t i = 0; i < ds.trials.size(); ++i) {
        const int y = ds.trials[i].label;
        require(y == 0 || y == 1, "evaluate: trial " + std::to_string(i) + " has label " +
                                      std::to_string(y) + ", expected 0 or 1");
        const int p = pred[i];
        r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)] += 1;
        totals[static_cast<std::size_t>(y)] += 1;
        if (p == y) {
            correct += 1;
            hits[static_cast<std::size_t>(y)] += 1;
        }
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_trials);
    for (int c = 0; c < 2; ++c)
        r.class_accuracy[static_cast<std::size_t>(c)] =
            totals[static_cast<std::size_t>(c)] > 0
                ? static_cast<double>(hits[static_cast<std::size_t>(c)]) /
                      static_cast<double>(totals[static_cast<std::size_t>(c)])
                : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// The optimization loop shared by base training and fine-tuning.

namespace detail {

template <typename T>
struct ParamSlot {
    std::string name;
    Tensor<T>* param = nullptr;
    bool trainable = false;
    AdamState<T> adam;  // moments allocated only when trainable
};

template <typename T>
std::vector<ParamSlot<T>> build_slots(ModelState<T>& m, const std::vector<std::string>& trainable,
                                      double lr) {
    std::vector<ParamSlot<T>> slots;
    for_each_param(m, [&](const char* name, Tensor<T>& t) {
        ParamSlot<T> s;
        s.name = name;
        s.param = &t;
        s.trainable = t.numel() > 0 &&
                      std::find(trainable.begin(), trainable.end(), name) != trainable.end();
        if (s.trainable) s.adam = AdamState<T>(t.shape(), lr);
        slots.push_back(std::move(s));
    });
    return slots;
}

template <typename T>
Tensor<T> gather_batch(const Dataset& ds, const std::vector<int>& order, int lo, int hi,
                       std::vector<int>& labels) {
    const int b = hi - lo;
    const int c = ds.n_channels(), t = ds.n_samples();
    Tensor<T> out({b, c, t});
    labels.assign(static_cast<std::size_t>(b), 0);
    const std::size_t stride = static_cast<std::size_t>(c) * static_cast<std::size_t>(t);
    for (int i = 0; i < b; ++i) {
        const Trial& tr = ds.trials[static_cast<std::size_t>(order[static_cast<std::size_t>(lo + i)])];
        std::copy(tr.data.data(), tr.data.data() + stride,
                  out.data() + static_cast<std::size_t>(i) * stride);
        labels[static_cast<std::size_t>(i)] = tr.label;
    }
    return out;
}

}  // namespace detail

/// Runs the optimization loop on `m` in place, updating only the named
/// parameters (fresh Adam moments per call). bn_mode = kInfer freezes the
/// batch-norm running statistics and normalizes with them; dropout stays
/// active in either mode. Loss is softmax cross-entropy, mean per epoch over
/// batches; the last short batch counts like any other.
template <typename T>
TrainReport fit(ModelState<T>& m, const Dataset& data, const TrainConfig& cfg,
                const std::vector<std::string>& trainable, Mode bn_mode = Mode::kTrain) {
    validate_train(cfg);
    validate_dataset(data);
    require(!data.trials.empty(), "train: empty dataset");
    require(data.n_channels() == m.cfg.n_channels && data.n_samples() == m.cfg.n_samples,
            "train: data trials are [" + std::to_string(data.n_channels()) + "," +
                std::to_string(data.n_samples()) + "] but the model expects [" +
                std::to_string(m.cfg.n_channels) + "," + std::to_string(m.cfg.n_samples) + "]");
    bool left = false, right = false;
    for (const Trial& t : data.trials) (t.label == 0 ? left : right) = true;
    require(left && right, "train: training data holds a single class; need both left and right trials");

    const auto t0 = std::chrono::steady_clock::now();
    auto slots = detail::build_slots(m, trainable, cfg.lr);
    bool conv_trainable = false, fc_w_trainable = false, conv2_trainable = false;
    bool only_dense = true;
    for (const auto& s : slots) {
        if (!s.trainable) continue;
        if (s.name == "conv1.w" || s.name == "conv2.w" || s.name == "conv3.dw" ||
            s.name == "conv3.pw")
            conv_trainable = true;
        if (s.name == "conv2.w") conv2_trainable = true;
        if (s.name == "fc.w") fc_w_trainable = true;
        if (s.name != "fc.w" && s.name != "fc.b") only_dense = false;
    }

    TrainReport rep;
    const int n = data.n_trials();
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    rep.stop_reason = "max_epochs";
    // the stop rule can already hold before the first update (zero-epoch edge)
    if (detail::stop_rule(0, best_epoch, cfg)) {
        rep.stop_reason = "early_stop";
        rep.stop_epoch = 0;
    } else {
        for (int e = 1; e <= cfg.max_epochs; ++e) {
            try {
                Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
                if (cfg.shuffle) rng.shuffle(order.begin(), order.end());
                double loss_sum = 0.0;
                int n_batches = 0;
                for (int lo = 0; lo < n; lo += cfg.batch) {
                    const int hi = std::min(n, lo + cfg.batch);
                    std::vector<int> labels;
                    const Tensor<T> batch = detail::gather_batch<T>(data, order, lo, hi, labels);
                    Tape<T> tape;
                    const Tensor<T> logits = forward(m, batch, bn_mode, Mode::kTrain, rng, &tape);
                    const SoftmaxXent<T> xe = softmax_xent_forward(logits, labels);
                    if (!std::isfinite(static_cast<double>(xe.loss)))
                        throw std::runtime_error("non-finite training loss");
                    const Tensor<T> dlogits = softmax_xent_backward(xe, labels);
                    if (only_dense) {
                        // classifier-only fine-tuning never needs the backward sweep
                        DenseGrads<T> dg = dense_backward(dlogits, tape.flat_in, m.fc_w);
                        for (auto& s : slots) {
                            if (!s.trainable) continue;
                            adam_update(*s.param, s.name == "fc.w" ? dg.dweight : dg.dbias, s.adam,
                                        s.name);
                        }
                    } else {
                        const ModelState<T> g = backward(m, tape, dlogits, conv_trainable);
                        std::vector<const Tensor<T>*> gptr;
                        gptr.reserve(slots.size());
                        for_each_param(g, [&](const char*, const Tensor<T>& t) { gptr.push_back(&t); });
                        for (std::size_t i = 0; i < slots.size(); ++i)
                            if (slots[i].trainable)
                                adam_update(*slots[i].param, *gptr[i], slots[i].adam, slots[i].name);
                    }
                    if (conv2_trainable) max_norm_project(m.conv2_w, m.cfg.maxnorm_spatial);
                    if (fc_w_trainable) max_norm_project(m.fc_w, m.cfg.maxnorm_dense);
                    loss_sum += static_cast<double>(xe.loss);
                    n_batches += 1;
                }
                rep.epoch_loss.push_back(loss_sum / static_cast<double>(n_batches));
            } catch (const std::exception& ex) {
                throw std::runtime_error("train: epoch " + std::to_string(e) + ": " + ex.what());
            }
            if (rep.epoch_loss.back() < best - cfg.min_delta) {
                best = rep.epoch_loss.back();
                best_epoch = e;
            }
            if (early_stop_check(rep.epoch_loss, best_epoch, cfg)) {
                rep.stop_reason = "early_stop";
                rep.stop_epoch = e;
                break;
            }
        }
        rep.stop_epoch = static_cast<int>(rep.epoch_loss.size());
    }

    rep.train_accuracy = evaluate(m, data).accuracy;
    rep.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

template <typename T>
struct FitResult {
    ModelState<T> model;
    TrainReport report;
};

/// Subject-independent base training: fresh model from `rng`, everything
/// trainable, batch statistics live.
template <typename T = float>
FitResult<T> train_base(const ArchConfig& arch, const TrainConfig& cfg, const Dataset& data,
                        Rng& rng) {
    FitResult<T> out{build_model<T>(arch, rng), {}};
    const auto trainable = trainable_partition(out.model, FinetuneVariant::kContinueAll);
    out.report = fit(out.model, data, cfg, trainable, Mode::kTrain);
    return out;
}

/// Per-subject fine-tuning from a trained base model. Frozen parameters stay
/// byte-identical to the base. Every variant except continue-all also freezes
/// the batch-norm running statistics (kInfer); dropout stays active.
template <typename T>
FitResult<T> finetune(const ModelState<T>& base, const Dataset& calibration, FinetuneVariant v,
                      const TrainConfig& cfg) {
    FitResult<T> out{base, {}};
    const auto trainable = trainable_partition(out.model, v);
    const Mode bn_mode = v == FinetuneVariant::kContinueAll ? Mode::kTrain : Mode::kInfer;
    out.report = fit(out.model, calibration, cfg, trainable, bn_mode);
    return out;
}

// ---------------------------------------------------------------------------
// Cross-subject aggregation.

struct MeanStd {
    double mean = 0.0;
    double stdev = 0.0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    require(!xs.empty(), "mean_std: empty sample");
    double mu = 0.0;
    for (double x : xs) mu += x;
    mu /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mu) * (x - mu);
    var /= static_cast<double>(xs.size());
    return {mu, std::sqrt(var)};
}

struct SubjectResult {
    int subject = 0;
    double base_acc = 0.0;
    double tuned_acc = 0.0;
};

struct CrossSubjectReport {
    std::vector<SubjectResult> subjects;
    MeanStd base;
    MeanStd tuned;
    MeanStd improvement;  // tuned - base, per subject
};

inline CrossSubjectReport cross_subject_report(std::vector<SubjectResult> rows) {
    require(!rows.empty(), "cross_subject_report: no subjects");
    CrossSubjectReport rep;
    std::vector<double> base, tuned, delta;
    for (const SubjectResult& r : rows) {
        base.push_back(r.base_acc);
        tuned.push_back(r.tuned_acc);
        delta.push_back(r.tuned_acc - r.base_acc);
    }
    rep.subjects = std::move(rows);
    rep.base = mean_std(base);
    rep.tuned = mean_std(tuned);
    rep.improvement = mean_std(delta);
    return rep;
}

}  // namespace semd
