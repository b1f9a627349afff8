#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cdx/params.hpp"
#include "cdx/rng.hpp"
#include "cdx/tensor.hpp"

namespace cdx::xlstm {

inline constexpr std::size_t kCausalConvWidth = 4;
inline constexpr std::size_t kDefaultHeads = 4;

/// Recurrent state of a multi-head mLSTM cell at one scan position.
/// C holds heads x (dv x dk) matrices, n heads x dk, m one log-domain
/// stabilizer per head. The stored C and n are the true memory scaled by
/// exp(-m).
struct MLSTMState {
    std::size_t heads = 0, dk = 0, dv = 0;
    std::vector<double> C, n, m;

    static MLSTMState zeros(std::size_t heads, std::size_t dk, std::size_t dv);
};

/// Advances the cell by one position and returns h (heads * dv).
///
/// Per head, with preactivations i~, f~:
///   m' = max(f~ + m, i~),  i' = exp(i~ - m'),  f' = exp(f~ + m - m')
///   C' = f' C + i' v k^T,  n' = f' n + i' k
///   h  = sigmoid(o~) * C' q / max(|n'^T q|, exp(-m'))
/// The exp(-m') floor is the stabilized form of max(|n^T q|, 1) on the
/// unscaled memory, so h does not depend on the stabilizer.
///
/// q, k: heads * dk; v, ogate: heads * dv; igate, fgate: heads.
std::vector<double> mlstm_step(MLSTMState& state, std::span<const double> q, std::span<const double> k,
                               std::span<const double> v, std::span<const double> igate,
                               std::span<const double> fgate, std::span<const double> ogate);

/// Differentiable recurrent scan of mlstm_step over L positions from a zero
/// state. q, k, v, ogate: (N, L, D); igate, fgate: (N, L, heads).
Tensor mlstm_scan(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& igate, const Tensor& fgate,
                  const Tensor& ogate, std::size_t heads);

/// Pins the readout denominator's max() branch on this thread. The first
/// begin() records the branch taken at every (position, head) of every scan
/// that follows; later begin() calls replay those choices in the same order.
/// Finite differences of a replayed evaluation then see the smooth piece that
/// backward() differentiates, even when a step would cross a branch switch.
/// Call begin() before each evaluation.
class PinNormalizerBranches {
public:
    enum class Mode { Off, Record, Replay };

    PinNormalizerBranches();
    ~PinNormalizerBranches();
    PinNormalizerBranches(const PinNormalizerBranches&) = delete;
    PinNormalizerBranches& operator=(const PinNormalizerBranches&) = delete;

    void begin();
    Mode mode() const;
    std::size_t recorded() const;
    std::size_t floor_count() const;

private:
    bool recorded_ = false;
};

struct MLSTMBlockParams {
    std::size_t dim = 0, inner = 0, heads = 0;
    Tensor norm_scale, norm_shift;      // (dim)
    Tensor up_x, up_z;                  // (dim, inner) each
    Tensor conv_kernel, conv_bias;      // (inner, 4), (inner)
    Tensor proj_q, proj_k, proj_v;      // (heads, inner/heads, inner/heads)
    Tensor igate_w, igate_b;            // (3*inner, heads), (heads)
    Tensor fgate_w, fgate_b;            // (3*inner, heads), (heads)
    Tensor ogate_w, ogate_b;            // (inner, inner), (inner)
    Tensor skip;                        // (inner)
    Tensor down, down_b;                // (inner, dim), (dim)
};

/// Pre-norm mLSTM block over (N, L, dim) sequences:
///   u = LN(x); a = u W_x; z = u W_z                     (inner = 2 dim)
///   c = silu(causal_conv(a)); q, k from c, v from a      (headwise)
///   h = mLSTM scan with gates from [q, k, v] and o~ from a
///   y = (h + skip * c) * silu(z);  out = x + y W_down + b
class MLSTMBlock {
public:
    MLSTMBlock() = default;
    MLSTMBlock(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads, Rng& rng);

    Tensor forward(const Tensor& seq) const;

    const MLSTMBlockParams& params() const { return p_; }
    std::size_t dim() const { return p_.dim; }

private:
    MLSTMBlockParams p_;
};

/// Shared-parameter bidirectional scan: B(x) + reverse(B(reverse(x))).
class BiMLSTM {
public:
    BiMLSTM() = default;
    BiMLSTM(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads, Rng& rng)
        : block_(store, prefix, dim, heads, rng) {}

    Tensor forward(const Tensor& seq) const;
    const MLSTMBlock& block() const { return block_; }

private:
    MLSTMBlock block_;
};

}  // namespace cdx::xlstm
