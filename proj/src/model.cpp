#include "cdx/model.hpp"

#include <tuple>

namespace cdx {

ChangeDetector::ChangeDetector(const ModelConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
    backbone_ = Backbone(store, "backbone", cfg.channels, rng);
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string p = "enhancer" + std::to_string(s);
        const std::size_t c = cfg.channels[s];
        if (cfg.assignment.stages[s] == EnhancerKind::CTSR)
            enhancers_[s] = CTSR(store, p + ".ctsr", c, cfg.phi_heads, rng);
        else
            enhancers_[s] = CTGP(store, p + ".ctgp", c, cfg.phi_heads, rng);
        align_[s] = ConvLayer(store, "align" + std::to_string(s), c, cfg.embed, 1, rng);
    }
    for (std::size_t i = 3; i-- > 0;) csif_[i] = CSIF(store, "csif" + std::to_string(i), cfg.embed, cfg.attn_heads, rng);
    head_ = DecodeHead(store, "head", cfg.embed, rng);
}

ForwardTrace ChangeDetector::trace(const Tensor& img1, const Tensor& img2) const {
    ForwardTrace t;
    std::tie(t.pyr1, t.pyr2) = backbone_.siamese_forward(img1, img2);
    for (std::size_t s = 0; s < 4; ++s) {
        t.reps[s] = enhance(enhancers_[s], t.pyr1.stages[s], t.pyr2.stages[s]);
        t.aligned[s] = align_[s].forward(t.reps[s]);
    }
    Tensor r = t.aligned[3];
    for (std::size_t i = 3; i-- > 0;) r = csif_[i].forward(t.aligned[i], r);
    t.fused = r;
    t.logits = head_.forward(r);
    return t;
}

Tensor ChangeDetector::forward(const Tensor& img1, const Tensor& img2) const { return trace(img1, img2).logits; }

}  // namespace cdx
