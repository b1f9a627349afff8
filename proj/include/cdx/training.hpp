#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cdx/params.hpp"
#include "cdx/tensor.hpp"

namespace cdx {

struct LossWeights {
    double ce = 1.0;
    double dice = 1.0;
};

/// Mean over pixels of max(z, 0) - z y + log(1 + exp(-|z|)). Targets must
/// be exactly 0 or 1 and match the logits' shape.
Tensor bce_loss(const Tensor& logits, const Tensor& target);

/// 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps), p = sigmoid(z).
Tensor dice_loss(const Tensor& logits, const Tensor& target, double eps = 1.0);

/// ce * bce + dice * dice_loss; negative weights are rejected.
Tensor total_loss(const Tensor& logits, const Tensor& target, const LossWeights& w = {});

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over every tensor of a ParamStore.
class Adam {
public:
    Adam(const ParamStore& store, const AdamConfig& cfg = {});

    /// Throws std::invalid_argument naming any parameter without a grad.
    void step();
    std::size_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    const ParamStore* store_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
    double f1 = 0, precision = 0, recall = 0, iou = 0, oa = 0;
};

/// logit > 0, i.e. sigmoid > 0.5.
std::vector<std::uint8_t> binarize_logits(const Tensor& logits);
std::vector<std::uint8_t> mask_of(const Tensor& target);

ConfusionCounts update_confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                                 ConfusionCounts acc = {});

/// Ratios with 0/0 -> 0.
Metrics metrics(const ConfusionCounts& c);

}  // namespace cdx
