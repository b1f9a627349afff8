#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>

#include "cdx/layers.hpp"

namespace cdx {

using StageChannels = std::array<std::size_t, 4>;

/// Feature maps at strides 4, 8, 16, 32.
struct PyramidFeatures {
    std::array<Tensor, 4> stages;
};

/// Toy Siamese encoder: a stride-2 stem, then four stages of
/// [conv3x3/2, SiLU, conv3x3, SiLU]. Input H and W must be multiples of 32.
class Backbone {
public:
    Backbone() = default;
    Backbone(ParamStore& store, const std::string& prefix, const StageChannels& channels, Rng& rng);

    PyramidFeatures forward(const Tensor& img) const;
    /// Both images go through the same parameters.
    std::pair<PyramidFeatures, PyramidFeatures> siamese_forward(const Tensor& img1, const Tensor& img2) const;

    const StageChannels& channels() const { return channels_; }

private:
    StageChannels channels_{};
    ConvLayer stem_;
    std::array<std::array<ConvLayer, 2>, 4> stages_;
};

}  // namespace cdx
