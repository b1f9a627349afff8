#include "cdx/fusion.hpp"

#include "cdx/ops.hpp"

namespace cdx {

CSIF::CSIF(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads, Rng& rng)
    : heads_(heads) {
    if (heads == 0 || channels % heads)
        throw std::invalid_argument("csif: channels " + std::to_string(channels) + " not divisible by heads " +
                                    std::to_string(heads));
    low_mlp_ = MLPResidual(store, prefix + ".low_mlp", channels, rng);
    reduce_ = ConvLayer(store, prefix + ".reduce", channels, channels, 3, rng, 2, channels);
    auto proj = [&](const std::string& n, Tensor& w, Tensor& b) {
        w = store.add(prefix + "." + n + ".weight", {channels, channels}, Init::FanInUniform, rng, channels);
        b = store.add(prefix + "." + n + ".bias", {channels}, Init::Zeros, rng);
    };
    proj("q", wq_, bq_);
    proj("k", wk_, bk_);
    proj("v", wv_, bv_);
    proj("o", wo_, bo_);
    out_mlp_ = MLPResidual(store, prefix + ".out_mlp", channels, rng);
}

Tensor CSIF::keys_values(const Tensor& rl2) const { return raster_flatten(reduce_.forward(rl2)); }

CSIF::Tokens CSIF::prepare(const Tensor& rh, const Tensor& rl) const {
    if (rh.rank() != 4 || rl.rank() != 4 || rh.dim(0) != rl.dim(0) || rh.dim(1) != rl.dim(1))
        throw ShapeError("csif: rh " + shape_str(rh.shape()) + " and rl " + shape_str(rl.shape()) +
                         " must share batch and channels");
    if (rh.dim(2) != 2 * rl.dim(2) || rh.dim(3) != 2 * rl.dim(3))
        throw ShapeError("csif: spatial ratio must be 2, got rh " + shape_str(rh.shape()) + " rl " +
                         shape_str(rl.shape()));
    Tokens t;
    Tensor rl2 = low_mlp_.forward(rl);
    t.rh2 = add(rh, bilinear_upsample(rl2, 2));
    Tensor kv = keys_values(rl2);
    t.q = linear(raster_flatten(t.rh2), wq_, bq_);
    t.k = linear(kv, wk_, bk_);
    t.v = linear(kv, wv_, bv_);
    return t;
}

Tensor CSIF::forward(const Tensor& rh, const Tensor& rl) const {
    Tokens t = prepare(rh, rl);
    Tensor o = linear(attention(t.q, t.k, t.v, heads_), wo_, bo_);
    return out_mlp_.forward(add(t.rh2, raster_unflatten(o, rh.dim(2), rh.dim(3))));
}

std::vector<double> CSIF::attention_map(const Tensor& rh, const Tensor& rl) const {
    Tokens t = prepare(rh, rl);
    return attention_probs(t.q, t.k, heads_);
}

DecodeHead::DecodeHead(ParamStore& store, const std::string& prefix, std::size_t channels, Rng& rng)
    : mlp1_(store, prefix + ".mlp1", channels, channels, 1, rng),
      residual_(store, prefix + ".res", channels, channels, rng),
      mlp2_(store, prefix + ".mlp2", channels, 1, 1, rng) {}

Tensor DecodeHead::forward(const Tensor& r) const {
    Tensor h = add(silu(mlp1_.forward(r)), residual_.forward(r));
    return bilinear_upsample(mlp2_.forward(h), 4);
}

}  // namespace cdx
