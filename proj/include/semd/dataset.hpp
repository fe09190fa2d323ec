#pragma once

#include <string>
#include <vector>

#include "tensor.hpp"

namespace semd {

inline constexpr int kLabelLeft = 0;
inline constexpr int kLabelRight = 1;

/// One recorded trial before conditioning: full-length multichannel signal.
struct RawTrial {
    Tensor<float> data;  // [n_channels, n_samples_raw]
    double fs = 0;       // Hz
    int label = 0;       // 0 left, 1 right
    int subject = 0;
    std::string session;  // "calibration" | "online"
};

/// One conditioned trial, ready for the model.
struct Trial {
    Tensor<float> data;  // [n_channels, n_samples]
    int label = 0;
};

/// Ordered trial collection plus recording metadata.
struct Dataset {
    std::vector<Trial> trials;
    std::vector<std::string> montage;  // electrode names, one per channel
    double fs = 0;
    int subject = 0;
    std::string session;

    int n_channels() const { return trials.empty() ? static_cast<int>(montage.size()) : trials[0].data.dim(0); }
    int n_samples() const { return trials.empty() ? 0 : trials[0].data.dim(1); }
    int n_trials() const { return static_cast<int>(trials.size()); }
};

inline void validate_dataset(const Dataset& ds) {
    require(ds.fs > 0, "dataset sampling rate must be positive");
    for (std::size_t i = 0; i < ds.trials.size(); ++i) {
        const Trial& t = ds.trials[i];
        require(t.data.ndim() == 2, "trial " + std::to_string(i) + " is not a [channels, samples] tensor");
        require(t.data.shape() == ds.trials[0].data.shape(),
                "trial " + std::to_string(i) + " shape " + shape_str(t.data.shape()) +
                    " differs from trial 0 shape " + shape_str(ds.trials[0].data.shape()));
        require(t.label == 0 || t.label == 1,
                "trial " + std::to_string(i) + " label must be 0 (left) or 1 (right), got " +
                    std::to_string(t.label));
    }
    if (!ds.montage.empty() && !ds.trials.empty())
        require(static_cast<int>(ds.montage.size()) == ds.trials[0].data.dim(0),
                "montage size " + std::to_string(ds.montage.size()) + " does not match channel count " +
                    std::to_string(ds.trials[0].data.dim(0)));
}

/// 27-channel sensorimotor montage used by the synthetic generator. Shipped as
/// editable metadata in the dataset sidecar; nothing downstream assumes these
/// exact names.
inline std::vector<std::string> default_montage() {
    return {"Fp1", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "FC3", "FC1",
            "FCz", "FC2", "FC4", "C5",  "C3",  "C1",  "Cz",  "C2",  "C4",
            "C6",  "CP3", "CP1", "CPz", "CP2", "CP4", "P3",  "Pz",  "P4"};
}

}  // namespace semd
