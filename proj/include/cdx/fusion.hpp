#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cdx/layers.hpp"

namespace cdx {

/// Cross-scale fusion of a finer map rh with the next coarser map rl
/// (half the spatial size, same channel count):
///   rl' = mlp(rl); rh' = rh + up2(rl')
///   kv  = depthwise 3x3 stride-2 reduction of rl'
///   o   = attn(rh' Wq, kv Wk, kv Wv) Wo + bo
///   out = mlp(rh' + o)
/// Keys and values come from the reduced low-resolution tokens (spatial
/// reduction attention); the literal "convolve Q with K" reading would be
/// swapped in at `keys_values`.
class CSIF {
public:
    CSIF() = default;
    CSIF(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads, Rng& rng);

    Tensor forward(const Tensor& rh, const Tensor& rl) const;
    /// Row-stochastic attention map (N, heads, Lq, Lk) of the same pass.
    std::vector<double> attention_map(const Tensor& rh, const Tensor& rl) const;

    const MLPResidual& low_mlp() const { return low_mlp_; }
    const MLPResidual& out_mlp() const { return out_mlp_; }
    const ConvLayer& reduce() const { return reduce_; }
    const Tensor& wo() const { return wo_; }
    const Tensor& bo() const { return bo_; }
    std::size_t heads() const { return heads_; }

private:
    struct Tokens {
        Tensor rh2, q, k, v;
    };
    Tokens prepare(const Tensor& rh, const Tensor& rl) const;
    Tensor keys_values(const Tensor& rl2) const;

    std::size_t heads_ = 1;
    MLPResidual low_mlp_, out_mlp_;
    ConvLayer reduce_;
    Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

/// h = silu(conv1x1(r)) + DSConv(r); logits = up4(conv1x1(h) -> 1 channel).
class DecodeHead {
public:
    DecodeHead() = default;
    DecodeHead(ParamStore& store, const std::string& prefix, std::size_t channels, Rng& rng);

    Tensor forward(const Tensor& r) const;

    const ConvLayer& mlp1() const { return mlp1_; }
    const DSConv& residual() const { return residual_; }
    const ConvLayer& mlp2() const { return mlp2_; }

private:
    ConvLayer mlp1_;
    DSConv residual_;
    ConvLayer mlp2_;
};

}  // namespace cdx
