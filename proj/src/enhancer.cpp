#include "cdx/enhancer.hpp"

#include <stdexcept>

#include "cdx/ops.hpp"

namespace cdx {

EnhancerAssignment EnhancerAssignment::parse(const std::string& s) {
    if (s.size() != 4)
        throw std::invalid_argument("enhancer assignment must have 4 letters from {S, G}, got \"" + s + "\"");
    EnhancerAssignment a;
    for (std::size_t i = 0; i < 4; ++i) {
        if (s[i] == 'S') {
            a.stages[i] = EnhancerKind::CTSR;
        } else if (s[i] == 'G') {
            a.stages[i] = EnhancerKind::CTGP;
        } else {
            throw std::invalid_argument("enhancer assignment \"" + s + "\": bad character '" + std::string(1, s[i]) +
                                        "' at position " + std::to_string(i) + " (expected S or G)");
        }
    }
    return a;
}

std::string EnhancerAssignment::str() const {
    std::string s;
    for (auto k : stages) s += k == EnhancerKind::CTSR ? 'S' : 'G';
    return s;
}

Tensor coarse_diff(const Tensor& f1, const Tensor& f2) {
    if (f1.shape() != f2.shape())
        throw ShapeError("coarse_diff: " + shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
    return sub(f1, f2);
}

TemporalWeight::TemporalWeight(ParamStore& store, const std::string& prefix, std::size_t channels, Rng& rng)
    : ds_(store, prefix + ".ds", 2 * channels, channels, rng), head_(store, prefix + ".head", channels, channels, 1, rng) {}

Tensor TemporalWeight::forward(const Tensor& fc, const Tensor& ft) const {
    if (fc.shape() != ft.shape())
        throw ShapeError("temporal_weight: " + shape_str(fc.shape()) + " vs " + shape_str(ft.shape()));
    return sigmoid(head_.forward(ds_.forward(concat_channels(fc, ft))));
}

Tensor phi_2d(const xlstm::BiMLSTM& phi, const Tensor& x) {
    return raster_unflatten(phi.forward(raster_flatten(x)), x.dim(2), x.dim(3));
}

AxialWeight::AxialWeight(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads,
                         Rng& rng)
    : phi_v_(store, prefix + ".phi_v", channels, heads, rng),
      phi_h_(store, prefix + ".phi_h", channels, heads, rng),
      head_(store, prefix + ".head", channels, channels, 1, rng) {}

Tensor AxialWeight::forward(const Tensor& fc, const EnhancerSeams& seams) const {
    Tensor col = axial_avgpool(fc, Axis::Width);   // (N, C, H, 1)
    Tensor row = axial_avgpool(fc, Axis::Height);  // (N, C, 1, W)
    if (!seams.identity_phi) {
        col = phi_2d(phi_v_, col);
        row = phi_2d(phi_h_, row);
    }
    return sigmoid(head_.forward(add(add(fc, col), row)));
}

CTGP::CTGP(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads, Rng& rng)
    : tw_(store, prefix + ".tw", channels, rng),
      phi_(store, prefix + ".phi", channels, heads, rng),
      fuse_(store, prefix + ".fuse", 2 * channels, channels, rng) {}

Tensor CTGP::forward(const Tensor& f1, const Tensor& f2, const EnhancerSeams& seams) const {
    Tensor fc = coarse_diff(f1, f2);
    Tensor g = seams.identity_phi ? fc : phi_2d(phi_, fc);
    if (seams.unit_weights) return fuse_.forward(concat_channels(g, g));
    // Both weight maps gate the same Phi(F^c).
    Tensor a = mul(tw_.forward(fc, f1), g);
    Tensor b = mul(tw_.forward(fc, f2), g);
    return fuse_.forward(concat_channels(a, b));
}

CTSR::CTSR(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads, Rng& rng)
    : tw_(store, prefix + ".tw", channels, rng),
      aw_(store, prefix + ".aw", channels, heads, rng),
      fuse_(store, prefix + ".fuse", 2 * channels, channels, rng) {}

Tensor CTSR::forward(const Tensor& f1, const Tensor& f2, const EnhancerSeams& seams) const {
    if (seams.unit_weights) return fuse_.forward(concat_channels(f1, f2));
    Tensor fc = coarse_diff(f1, f2);
    Tensor wc = aw_.forward(fc, seams);
    Tensor a = mul(mul(wc, tw_.forward(fc, f1)), f1);
    Tensor b = mul(mul(wc, tw_.forward(fc, f2)), f2);
    return fuse_.forward(concat_channels(a, b));
}

Tensor enhance(const StageEnhancer& e, const Tensor& f1, const Tensor& f2, const EnhancerSeams& seams) {
    return std::visit([&](const auto& m) { return m.forward(f1, f2, seams); }, e);
}

}  // namespace cdx
