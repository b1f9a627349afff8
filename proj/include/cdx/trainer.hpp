#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cdx/data.hpp"
#include "cdx/model.hpp"
#include "cdx/training.hpp"

namespace cdx {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch = 2;
    AdamConfig adam;
    LossWeights loss;
    /// Drives the per-epoch shuffle.
    std::uint64_t seed = 0;
};

/// One row per epoch. Loss is the mean over batches; counts accumulate the
/// training forward passes (taken before each batch's update).
struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    ConfusionCounts counts;
    Metrics metrics;
};

struct EvalResult {
    double loss = 0.0;
    ConfusionCounts counts;
    Metrics metrics;
};

/// Stacks img1, img2 or mask (which = 0, 1, 2) of the chosen samples along
/// the batch axis.
Tensor stack_samples(const std::vector<BiTemporalSample>& samples, const std::vector<std::size_t>& idx, int which);

/// Adam over shuffled mini-batches. The callback sees each row as soon as
/// its epoch ends. Deterministic given the store's initial values, the
/// samples and cfg.
std::vector<EpochLog> train(const ChangeDetector& model, ParamStore& store, const std::vector<BiTemporalSample>& samples,
                            const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {});

/// Loss and confusion counts without recording a graph. The loss is the
/// sample-weighted mean of per-batch losses; Dice pools each batch, so it
/// depends on `batch`. The counts do not.
EvalResult evaluate(const ChangeDetector& model, const std::vector<BiTemporalSample>& samples,
                    const LossWeights& loss = {}, std::size_t batch = 4);

}  // namespace cdx
