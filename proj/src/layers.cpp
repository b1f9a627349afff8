#include "cdx/layers.hpp"

#include "cdx/ops.hpp"

namespace cdx {

ConvLayer::ConvLayer(ParamStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                     Rng& rng, std::size_t stride_, std::size_t groups_, Init init)
    : stride(stride_), groups(groups_) {
    if (groups == 0 || cin % groups || cout % groups)
        throw ShapeError(name + ": channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                         " not divisible by groups " + std::to_string(groups));
    const std::size_t cg = cin / groups;
    weight = store.add(name + ".weight", {cout, cg, k, k}, init, rng, cg * k * k);
    bias = store.add(name + ".bias", {cout}, Init::Zeros, rng);
}

Tensor ConvLayer::forward(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, weight.dim(2) / 2, groups);
}

Tensor dsconv(const Tensor& x, const Tensor& dw_weight, const Tensor& dw_bias, const Tensor& pw_weight,
              const Tensor& pw_bias) {
    if (x.rank() != 4) throw ShapeError("dsconv: expected (N, C, H, W), got " + shape_str(x.shape()));
    const std::size_t c = x.dim(1);
    Tensor d = conv2d(x, dw_weight, dw_bias, 1, 1, c);
    return conv2d(d, pw_weight, pw_bias);
}

DSConv::DSConv(ParamStore& store, const std::string& prefix, std::size_t cin, std::size_t cout, Rng& rng)
    : depthwise(store, prefix + ".dw", cin, cin, 3, rng, 1, cin), pointwise(store, prefix + ".pw", cin, cout, 1, rng) {}

Tensor DSConv::forward(const Tensor& x) const {
    return dsconv(x, depthwise.weight, depthwise.bias, pointwise.weight, pointwise.bias);
}

MLPResidual::MLPResidual(ParamStore& store, const std::string& prefix, std::size_t channels, Rng& rng)
    : fc1(store, prefix + ".fc1", channels, 2 * channels, 1, rng), fc2(store, prefix + ".fc2", 2 * channels, channels, 1, rng) {}

Tensor MLPResidual::forward(const Tensor& x) const {
    return add(x, fc2.forward(silu(fc1.forward(x))));
}

}  // namespace cdx
