#pragma once

#include <cstddef>
#include <string>

#include "cdx/params.hpp"
#include "cdx/tensor.hpp"

namespace cdx {

/// Square-kernel convolution with bias, padding k/2.
struct ConvLayer {
    Tensor weight, bias;
    std::size_t stride = 1, groups = 1;

    ConvLayer() = default;
    ConvLayer(ParamStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              Rng& rng, std::size_t stride = 1, std::size_t groups = 1, Init init = Init::FanInUniform);

    Tensor forward(const Tensor& x) const;
    std::size_t in_channels() const { return weight.dim(1) * groups; }
    std::size_t out_channels() const { return weight.dim(0); }
};

/// Depthwise 3x3 (groups = C, pad 1) then pointwise 1x1, both with bias.
Tensor dsconv(const Tensor& x, const Tensor& dw_weight, const Tensor& dw_bias, const Tensor& pw_weight,
              const Tensor& pw_bias);

struct DSConv {
    ConvLayer depthwise, pointwise;

    DSConv() = default;
    DSConv(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout, Rng& rng);

    Tensor forward(const Tensor& x) const;
};

/// x + W2 silu(W1 x + b1) + b2 with 1x1 convs; hidden width 2C.
struct MLPResidual {
    ConvLayer fc1, fc2;

    MLPResidual() = default;
    MLPResidual(ParamStore& store, const std::string& prefix, std::size_t channels, Rng& rng);

    Tensor forward(const Tensor& x) const;
};

}  // namespace cdx
