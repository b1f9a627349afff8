#pragma once

#include <cstddef>

#include "cdx/tensor.hpp"

namespace cdx {

// Element-wise arithmetic. Operands must have equal rank; each dimension is
// either equal or 1 on one side (numpy-style broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

/// Sum of all entries, shape (1).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Concatenation along `axis`; every other dimension must agree.
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
inline Tensor concat_channels(const Tensor& a, const Tensor& b) { return concat(a, b, 1); }

Tensor reshape(const Tensor& x, Shape shape);

/// Cross-correlation. x: (N, Cin, H, W); weight: (Cout, Cin/groups, k, k);
/// bias: (Cout) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0, std::size_t groups = 1);

/// Bilinear resize by an integer factor, half-pixel (align_corners=false)
/// sampling with edge clamping.
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);

enum class Axis { Height, Width };

/// Mean over one spatial axis; that axis collapses to size 1.
Tensor axial_avgpool(const Tensor& x, Axis axis);

/// (N, C, H, W) -> (N, H*W, C) in row-major raster order.
Tensor raster_flatten(const Tensor& x);
/// (N, L, C) -> (N, C, H, W); requires L == H*W.
Tensor raster_unflatten(const Tensor& seq, std::size_t h, std::size_t w);

/// Reverses a (N, L, C) sequence along L.
Tensor reverse_seq(const Tensor& seq);

/// seq (N, L, Cin) x weight (Cin, Cout) + bias (Cout).
Tensor linear(const Tensor& seq, const Tensor& weight, const Tensor& bias);

/// Block-diagonal projection: weight (heads, din, dout) maps each head's
/// slice of a (N, L, heads*din) sequence independently.
Tensor headwise_linear(const Tensor& seq, const Tensor& weight);

/// Normalizes each (n, l) row of a (N, L, C) sequence over C.
Tensor layer_norm(const Tensor& seq, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Depthwise causal convolution over L. kernel: (C, K), the last tap
/// multiplies the current position; positions before 0 read as zero.
Tensor causal_conv1d(const Tensor& seq, const Tensor& kernel, const Tensor& bias);

/// Scaled dot-product attention, q: (N, Lq, D), k: (N, Lk, D), v: (N, Lk, Dv).
/// D and Dv are split evenly into `heads`; scale is 1/sqrt(D/heads).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads = 1);

/// Row-stochastic attention matrix (N, heads, Lq, Lk) for inspection.
std::vector<double> attention_probs(const Tensor& q, const Tensor& k, std::size_t heads = 1);

}  // namespace cdx
