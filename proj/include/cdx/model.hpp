#pragma once

#include <array>
#include <cstddef>

#include "cdx/backbone.hpp"
#include "cdx/enhancer.hpp"
#include "cdx/fusion.hpp"

namespace cdx {

struct ModelConfig {
    StageChannels channels{16, 32, 64, 128};
    EnhancerAssignment assignment;
    std::size_t phi_heads = xlstm::kDefaultHeads;
    std::size_t attn_heads = 1;
    /// Common width of the fused representations; each stage's R_i is
    /// mapped to it by a 1x1 projection before CSIF.
    std::size_t embed = 32;
};

/// Intermediate results of one forward pass.
struct ForwardTrace {
    PyramidFeatures pyr1, pyr2;
    std::array<Tensor, 4> reps;     // enhancer outputs, stage channels
    std::array<Tensor, 4> aligned;  // embed channels
    Tensor fused;                   // 1/4-scale representation fed to the head
    Tensor logits;
};

class ChangeDetector {
public:
    ChangeDetector(const ModelConfig& cfg, ParamStore& store, Rng& rng);

    /// Logits (N, 1, H, W) for an image pair (N, 3, H, W).
    Tensor forward(const Tensor& img1, const Tensor& img2) const;
    ForwardTrace trace(const Tensor& img1, const Tensor& img2) const;

    const ModelConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return backbone_; }
    const StageEnhancer& enhancer(std::size_t s) const { return enhancers_[s]; }
    const CSIF& csif(std::size_t i) const { return csif_[i]; }
    const DecodeHead& head() const { return head_; }

private:
    ModelConfig cfg_;
    Backbone backbone_;
    std::array<StageEnhancer, 4> enhancers_;
    std::array<ConvLayer, 4> align_;
    std::array<CSIF, 3> csif_;  // csif_[i] fuses into stage i
    DecodeHead head_;
};

}  // namespace cdx
