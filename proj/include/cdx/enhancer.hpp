#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <variant>

#include "cdx/layers.hpp"
#include "cdx/xlstm.hpp"

namespace cdx {

enum class EnhancerKind { CTSR, CTGP };

/// Per-stage enhancer selection, written as a 4-letter string over {S, G}.
struct EnhancerAssignment {
    std::array<EnhancerKind, 4> stages{EnhancerKind::CTSR, EnhancerKind::CTSR, EnhancerKind::CTGP, EnhancerKind::CTGP};

    /// Throws std::invalid_argument naming the first bad character.
    static EnhancerAssignment parse(const std::string& s);
    std::string str() const;
};

/// F^c = f1 - f2.
Tensor coarse_diff(const Tensor& f1, const Tensor& f2);

/// Test seams. identity_phi replaces every Bi-mLSTM with the identity;
/// unit_weights forces every attention weight map to 1.
struct EnhancerSeams {
    bool identity_phi = false;
    bool unit_weights = false;
};

/// sigma(conv1x1(DSConv(concat(fc, ft)))). One instance serves both t.
class TemporalWeight {
public:
    TemporalWeight() = default;
    TemporalWeight(ParamStore& store, const std::string& prefix, std::size_t channels, Rng& rng);
    Tensor forward(const Tensor& fc, const Tensor& ft) const;

    const DSConv& dsconv() const { return ds_; }
    const ConvLayer& head() const { return head_; }

private:
    DSConv ds_;
    ConvLayer head_;
};

/// sigma(conv1x1(fc + Phi_v(pool_W fc) + Phi_h(pool_H fc))), pooled profiles
/// scanned as length-H and length-W sequences and broadcast back.
class AxialWeight {
public:
    AxialWeight() = default;
    AxialWeight(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads, Rng& rng);
    Tensor forward(const Tensor& fc, const EnhancerSeams& seams = {}) const;

    const xlstm::BiMLSTM& phi_v() const { return phi_v_; }
    const xlstm::BiMLSTM& phi_h() const { return phi_h_; }
    const ConvLayer& head() const { return head_; }

private:
    xlstm::BiMLSTM phi_v_, phi_h_;
    ConvLayer head_;
};

/// Applies Phi over the raster-flattened map.
Tensor phi_2d(const xlstm::BiMLSTM& phi, const Tensor& x);

/// Deep-stage enhancer: R = DSConv(concat(W^1 * g, W^2 * g)), g = Phi(F^c).
class CTGP {
public:
    CTGP() = default;
    CTGP(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads, Rng& rng);
    Tensor forward(const Tensor& f1, const Tensor& f2, const EnhancerSeams& seams = {}) const;

    const TemporalWeight& temporal() const { return tw_; }
    const xlstm::BiMLSTM& phi() const { return phi_; }
    const DSConv& fuse() const { return fuse_; }

private:
    TemporalWeight tw_;
    xlstm::BiMLSTM phi_;
    DSConv fuse_;
};

/// Shallow-stage enhancer: R = DSConv(concat(W^c * W^1 * f1, W^c * W^2 * f2)).
class CTSR {
public:
    CTSR() = default;
    CTSR(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t heads, Rng& rng);
    Tensor forward(const Tensor& f1, const Tensor& f2, const EnhancerSeams& seams = {}) const;

    const TemporalWeight& temporal() const { return tw_; }
    const AxialWeight& axial() const { return aw_; }
    const DSConv& fuse() const { return fuse_; }

private:
    TemporalWeight tw_;
    AxialWeight aw_;
    DSConv fuse_;
};

using StageEnhancer = std::variant<CTSR, CTGP>;

Tensor enhance(const StageEnhancer& e, const Tensor& f1, const Tensor& f2, const EnhancerSeams& seams = {});

}  // namespace cdx
