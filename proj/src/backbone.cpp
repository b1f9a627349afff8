#include "cdx/backbone.hpp"

#include "cdx/ops.hpp"

namespace cdx {

Backbone::Backbone(ParamStore& store, const std::string& prefix, const StageChannels& channels, Rng& rng)
    : channels_(channels) {
    for (std::size_t s = 1; s < 4; ++s)
        if (channels[s] <= channels[s - 1])
            throw std::invalid_argument("backbone: stage channels must strictly increase, got " +
                                        std::to_string(channels[s - 1]) + " then " + std::to_string(channels[s]));
    constexpr Init kInit = Init::KaimingUniform;
    stem_ = ConvLayer(store, prefix + ".stem", 3, channels[0], 3, rng, 2, 1, kInit);
    std::size_t cin = channels[0];
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string p = prefix + ".stage" + std::to_string(s);
        stages_[s][0] = ConvLayer(store, p + ".down", cin, channels[s], 3, rng, 2, 1, kInit);
        stages_[s][1] = ConvLayer(store, p + ".conv", channels[s], channels[s], 3, rng, 1, 1, kInit);
        cin = channels[s];
    }
}

PyramidFeatures Backbone::forward(const Tensor& img) const {
    if (img.rank() != 4 || img.dim(1) != 3)
        throw ShapeError("backbone: expected (N, 3, H, W), got " + shape_str(img.shape()));
    if (img.dim(2) % 32 || img.dim(3) % 32)
        throw ShapeError("backbone: H and W must be multiples of 32, got " + shape_str(img.shape()));
    PyramidFeatures out;
    Tensor x = silu(stem_.forward(img));
    for (std::size_t s = 0; s < 4; ++s) {
        x = silu(stages_[s][0].forward(x));
        x = silu(stages_[s][1].forward(x));
        out.stages[s] = x;
    }
    return out;
}

std::pair<PyramidFeatures, PyramidFeatures> Backbone::siamese_forward(const Tensor& img1, const Tensor& img2) const {
    if (img1.shape() != img2.shape())
        throw ShapeError("siamese_forward: image shapes differ, " + shape_str(img1.shape()) + " vs " +
                         shape_str(img2.shape()));
    return {forward(img1), forward(img2)};
}

}  // namespace cdx
