#include "cdx/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace cdx {

namespace {

using Dims4 = std::array<std::size_t, 4>;

Dims4 pad4(const Shape& s) {
    Dims4 d{1, 1, 1, 1};
    std::copy(s.begin(), s.end(), d.begin() + (4 - s.size()));
    return d;
}

Dims4 strides4(const Dims4& d) { return {d[1] * d[2] * d[3], d[2] * d[3], d[3], 1}; }

// Index plan for a broadcast binary op; strides are zero along broadcast axes.
struct Broadcast {
    Shape out_shape;
    Dims4 out;
    Dims4 sa;
    Dims4 sb;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size())
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    Broadcast p;
    p.out_shape.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) {
            p.out_shape[i] = a[i];
        } else if (a[i] == 1) {
            p.out_shape[i] = b[i];
        } else {
            throw ShapeError(std::string(op) + ": dimension " + std::to_string(i) + " not broadcastable (" +
                             std::to_string(a[i]) + " vs " + std::to_string(b[i]) + ")");
        }
    }
    p.out = pad4(p.out_shape);
    auto da = pad4(a), db = pad4(b);
    auto ta = strides4(da), tb = strides4(db);
    for (int i = 0; i < 4; ++i) {
        p.sa[i] = da[i] == 1 ? 0 : ta[i];
        p.sb[i] = db[i] == 1 ? 0 : tb[i];
    }
    return p;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
    std::size_t i = 0;
    for (std::size_t d0 = 0; d0 < p.out[0]; ++d0)
        for (std::size_t d1 = 0; d1 < p.out[1]; ++d1)
            for (std::size_t d2 = 0; d2 < p.out[2]; ++d2) {
                std::size_t ia = d0 * p.sa[0] + d1 * p.sa[1] + d2 * p.sa[2];
                std::size_t ib = d0 * p.sb[0] + d1 * p.sb[1] + d2 * p.sb[2];
                for (std::size_t d3 = 0; d3 < p.out[3]; ++d3, ++i)
                    f(i, ia + d3 * p.sa[3], ib + d3 * p.sb[3]);
            }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    auto plan = plan_broadcast(a.shape(), b.shape(), name);
    std::vector<double> out(numel_of(plan.out_shape));
    const auto& va = a.node()->value;
    const auto& vb = b.node()->value;
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (op) {
            case BinOp::Add: out[i] = va[ia] + vb[ib]; break;
            case BinOp::Sub: out[i] = va[ia] - vb[ib]; break;
            case BinOp::Mul: out[i] = va[ia] * vb[ib]; break;
        }
    });
    auto na = a.node_ptr(), nb = b.node_ptr();
    return make_result(
        plan.out_shape, std::move(out), {a, b},
        [na, nb, plan, op](Node& self) {
            const auto& g = self.grad;
            const bool ga = na->requires_grad, gb = nb->requires_grad;
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                switch (op) {
                    case BinOp::Add:
                        if (ga) na->grad[ia] += g[i];
                        if (gb) nb->grad[ib] += g[i];
                        break;
                    case BinOp::Sub:
                        if (ga) na->grad[ia] += g[i];
                        if (gb) nb->grad[ib] -= g[i];
                        break;
                    case BinOp::Mul:
                        if (ga) na->grad[ia] += g[i] * nb->value[ib];
                        if (gb) nb->grad[ib] += g[i] * na->value[ia];
                        break;
                }
            });
        },
        name);
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, double s) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= s;
    auto nx = x.node_ptr();
    return make_result(
        x.shape(), std::move(out), {x},
        [nx, s](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += s * self.grad[i];
        },
        "scale");
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& v = x.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-v[i]));
    auto nx = x.node_ptr();
    return make_result(
        x.shape(), std::move(out), {x},
        [nx](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double s = self.value[i];
                nx->grad[i] += self.grad[i] * s * (1.0 - s);
            }
        },
        "sigmoid");
}

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& v = x.node()->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] / (1.0 + std::exp(-v[i]));
    auto nx = x.node_ptr();
    return make_result(
        x.shape(), std::move(out), {x},
        [nx](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double z = nx->value[i];
                const double s = 1.0 / (1.0 + std::exp(-z));
                nx->grad[i] += self.grad[i] * s * (1.0 + z * (1.0 - s));
            }
        },
        "silu");
}

Tensor sum(const Tensor& x) {
    long double acc = 0.0L;
    for (double v : x.data()) acc += v;
    auto nx = x.node_ptr();
    return make_result(
        {1}, {static_cast<double>(acc)}, {x},
        [nx](Node& self) {
            const double g = self.grad[0];
            for (auto& gi : nx->grad) gi += g;
        },
        "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
    if (a.rank() != b.rank() || axis >= a.rank())
        throw ShapeError("concat: incompatible ranks or axis for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw ShapeError("concat: dimension " + std::to_string(i) + " differs (" + std::to_string(a.dim(i)) +
                             " vs " + std::to_string(b.dim(i)) + ")");
    Shape out_shape = a.shape();
    out_shape[axis] += b.dim(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const std::size_t ca = a.dim(axis) * inner, cb = b.dim(axis) * inner;
    std::vector<double> out;
    out.reserve(numel_of(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        out.insert(out.end(), a.data().begin() + o * ca, a.data().begin() + (o + 1) * ca);
        out.insert(out.end(), b.data().begin() + o * cb, b.data().begin() + (o + 1) * cb);
    }
    auto na = a.node_ptr(), nb = b.node_ptr();
    return make_result(
        out_shape, std::move(out), {a, b},
        [na, nb, outer, ca, cb](Node& self) {
            const auto& g = self.grad;
            for (std::size_t o = 0; o < outer; ++o) {
                const std::size_t base = o * (ca + cb);
                if (na->requires_grad)
                    for (std::size_t i = 0; i < ca; ++i) na->grad[o * ca + i] += g[base + i];
                if (nb->requires_grad)
                    for (std::size_t i = 0; i < cb; ++i) nb->grad[o * cb + i] += g[base + ca + i];
            }
        },
        "concat");
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    auto nx = x.node_ptr();
    return make_result(
        std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
        [nx](Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += self.grad[i];
        },
        "reshape");
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding,
              std::size_t groups) {
    require_rank(x, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
    if (groups == 0) throw ShapeError("conv2d: groups must be >= 1");
    const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = weight.dim(0), Cg = weight.dim(1), K = weight.dim(2);
    if (weight.dim(3) != K) throw ShapeError("conv2d: kernel must be square, got " + shape_str(weight.shape()));
    if (Cin % groups != 0)
        throw ShapeError("conv2d: input channels " + std::to_string(Cin) + " not divisible by groups " +
                         std::to_string(groups));
    if (Cout % groups != 0)
        throw ShapeError("conv2d: output channels " + std::to_string(Cout) + " not divisible by groups " +
                         std::to_string(groups));
    if (Cg != Cin / groups)
        throw ShapeError("conv2d: weight dimension 1 is " + std::to_string(Cg) + ", expected Cin/groups = " +
                         std::to_string(Cin / groups));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
        throw ShapeError("conv2d: bias must have shape (" + std::to_string(Cout) + "), got " +
                         shape_str(bias.shape()));
    if (H + 2 * padding < K || W + 2 * padding < K)
        throw ShapeError("conv2d: kernel " + std::to_string(K) + " larger than padded input height/width");

    const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - K) / stride + 1;
    const std::size_t Cog = Cout / groups;
    const long P = static_cast<long>(padding), S = static_cast<long>(stride);

    // Valid output range along one axis for kernel tap `k`.
    auto range = [P, S](std::size_t k, std::size_t in, std::size_t outn) {
        long lo = 0;
        const long off = static_cast<long>(k) - P;
        while (lo < static_cast<long>(outn) && lo * S + off < 0) ++lo;
        long hi = static_cast<long>(outn);
        while (hi > lo && (hi - 1) * S + off >= static_cast<long>(in)) --hi;
        return std::pair<long, long>{lo, hi};
    };

    std::vector<double> out(N * Cout * Ho * Wo, 0.0);
    const auto& xv = x.node()->value;
    const auto& wv = weight.node()->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oc = 0; oc < Cout; ++oc) {
            double* op = out.data() + (n * Cout + oc) * Ho * Wo;
            if (bias.defined()) std::fill(op, op + Ho * Wo, bias.data()[oc]);
            const std::size_t g = oc / Cog;
            for (std::size_t icl = 0; icl < Cg; ++icl) {
                const double* ip = xv.data() + (n * Cin + g * Cg + icl) * H * W;
                for (std::size_t kh = 0; kh < K; ++kh) {
                    auto [oh0, oh1] = range(kh, H, Ho);
                    for (std::size_t kw = 0; kw < K; ++kw) {
                        const double wk = wv[((oc * Cg + icl) * K + kh) * K + kw];
                        auto [ow0, ow1] = range(kw, W, Wo);
                        for (long oh = oh0; oh < oh1; ++oh) {
                            const double* row = ip + (oh * S + static_cast<long>(kh) - P) * static_cast<long>(W);
                            double* orow = op + oh * static_cast<long>(Wo);
                            for (long ow = ow0; ow < ow1; ++ow)
                                orow[ow] += wk * row[ow * S + static_cast<long>(kw) - P];
                        }
                    }
                }
            }
        }

    auto nx = x.node_ptr(), nw = weight.node_ptr();
    NodePtr nb = bias.defined() ? bias.node_ptr() : nullptr;
    return make_result(
        {N, Cout, Ho, Wo}, std::move(out), {x, weight, bias},
        [=](Node& self) {
            const auto& g = self.grad;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t oc = 0; oc < Cout; ++oc) {
                    const double* gp = g.data() + (n * Cout + oc) * Ho * Wo;
                    if (nb && nb->requires_grad) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
                        nb->grad[oc] += acc;
                    }
                    const std::size_t grp = oc / Cog;
                    for (std::size_t icl = 0; icl < Cg; ++icl) {
                        const std::size_t ioff = (n * Cin + grp * Cg + icl) * H * W;
                        const double* ip = nx->value.data() + ioff;
                        double* gi = nx->requires_grad ? nx->grad.data() + ioff : nullptr;
                        for (std::size_t kh = 0; kh < K; ++kh) {
                            auto [oh0, oh1] = range(kh, H, Ho);
                            for (std::size_t kw = 0; kw < K; ++kw) {
                                const std::size_t widx = ((oc * Cg + icl) * K + kh) * K + kw;
                                const double wk = nw->value[widx];
                                auto [ow0, ow1] = range(kw, W, Wo);
                                double acc = 0.0;
                                for (long oh = oh0; oh < oh1; ++oh) {
                                    const long roff = (oh * S + static_cast<long>(kh) - P) * static_cast<long>(W);
                                    const double* grow = gp + oh * static_cast<long>(Wo);
                                    for (long ow = ow0; ow < ow1; ++ow) {
                                        const long c = roff + ow * S + static_cast<long>(kw) - P;
                                        acc += grow[ow] * ip[c];
                                        if (gi) gi[c] += grow[ow] * wk;
                                    }
                                }
                                if (nw->requires_grad) nw->grad[widx] += acc;
                            }
                        }
                    }
                }
        },
        "conv2d");
}

namespace {

// Per-axis bilinear taps for half-pixel sampling with edge clamping.
struct Taps {
    std::vector<std::size_t> i0, i1;
    std::vector<double> l1;
};

Taps make_taps(std::size_t in, std::size_t factor) {
    Taps t;
    const std::size_t out = in * factor;
    t.i0.resize(out);
    t.i1.resize(out);
    t.l1.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::size_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        t.i0[o] = i0;
        t.i1[o] = std::min(i0 + 1, in - 1);
        t.l1[o] = src - static_cast<double>(i0);
    }
    return t;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
    require_rank(x, 4, "bilinear_upsample");
    if (factor == 0) throw ShapeError("bilinear_upsample: factor must be >= 1");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = H * factor, Wo = W * factor;
    auto th = make_taps(H, factor), tw = make_taps(W, factor);
    std::vector<double> out(N * C * Ho * Wo);
    const auto& xv = x.node()->value;
    for (std::size_t p = 0; p < N * C; ++p) {
        const double* ip = xv.data() + p * H * W;
        double* op = out.data() + p * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
            const double ly = th.l1[oh];
            const double* r0 = ip + th.i0[oh] * W;
            const double* r1 = ip + th.i1[oh] * W;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
                const double lx = tw.l1[ow];
                const std::size_t a = tw.i0[ow], b = tw.i1[ow];
                op[oh * Wo + ow] = (1 - ly) * ((1 - lx) * r0[a] + lx * r0[b]) + ly * ((1 - lx) * r1[a] + lx * r1[b]);
            }
        }
    }
    auto nx = x.node_ptr();
    return make_result(
        {N, C, Ho, Wo}, std::move(out), {x},
        [nx, th, tw, N, C, H, W, Ho, Wo](Node& self) {
            for (std::size_t p = 0; p < N * C; ++p) {
                double* gi = nx->grad.data() + p * H * W;
                const double* go = self.grad.data() + p * Ho * Wo;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const double ly = th.l1[oh];
                    double* r0 = gi + th.i0[oh] * W;
                    double* r1 = gi + th.i1[oh] * W;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const double lx = tw.l1[ow];
                        const double g = go[oh * Wo + ow];
                        const std::size_t a = tw.i0[ow], b = tw.i1[ow];
                        r0[a] += g * (1 - ly) * (1 - lx);
                        r0[b] += g * (1 - ly) * lx;
                        r1[a] += g * ly * (1 - lx);
                        r1[b] += g * ly * lx;
                    }
                }
            }
        },
        "bilinear_upsample");
}

Tensor axial_avgpool(const Tensor& x, Axis axis) {
    require_rank(x, 4, "axial_avgpool");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const bool over_h = axis == Axis::Height;
    Shape out_shape = over_h ? Shape{N, C, 1, W} : Shape{N, C, H, 1};
    std::vector<double> out(numel_of(out_shape), 0.0);
    const auto& xv = x.node()->value;
    const double inv = 1.0 / static_cast<double>(over_h ? H : W);
    for (std::size_t p = 0; p < N * C; ++p)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
                out[over_h ? p * W + w : p * H + h] += xv[(p * H + h) * W + w];
    for (auto& v : out) v *= inv;
    auto nx = x.node_ptr();
    return make_result(
        out_shape, std::move(out), {x},
        [nx, N, C, H, W, over_h, inv](Node& self) {
            for (std::size_t p = 0; p < N * C; ++p)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w)
                        nx->grad[(p * H + h) * W + w] += inv * self.grad[over_h ? p * W + w : p * H + h];
        },
        "axial_avgpool");
}

Tensor raster_flatten(const Tensor& x) {
    require_rank(x, 4, "raster_flatten");
    const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2) * x.dim(3);
    std::vector<double> out(N * L * C);
    const auto& xv = x.node()->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t l = 0; l < L; ++l) out[(n * L + l) * C + c] = xv[(n * C + c) * L + l];
    auto nx = x.node_ptr();
    return make_result(
        {N, L, C}, std::move(out), {x},
        [nx, N, C, L](Node& self) {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t l = 0; l < L; ++l) nx->grad[(n * C + c) * L + l] += self.grad[(n * L + l) * C + c];
        },
        "raster_flatten");
}

Tensor raster_unflatten(const Tensor& seq, std::size_t h, std::size_t w) {
    require_rank(seq, 3, "raster_unflatten");
    const std::size_t N = seq.dim(0), L = seq.dim(1), C = seq.dim(2);
    if (L != h * w)
        throw ShapeError("raster_unflatten: sequence length " + std::to_string(L) + " != H*W = " +
                         std::to_string(h * w));
    std::vector<double> out(N * C * L);
    const auto& sv = seq.node()->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t c = 0; c < C; ++c) out[(n * C + c) * L + l] = sv[(n * L + l) * C + c];
    auto ns = seq.node_ptr();
    return make_result(
        {N, C, h, w}, std::move(out), {seq},
        [ns, N, C, L](Node& self) {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t l = 0; l < L; ++l)
                    for (std::size_t c = 0; c < C; ++c) ns->grad[(n * L + l) * C + c] += self.grad[(n * C + c) * L + l];
        },
        "raster_unflatten");
}

Tensor reverse_seq(const Tensor& seq) {
    require_rank(seq, 3, "reverse_seq");
    const std::size_t N = seq.dim(0), L = seq.dim(1), C = seq.dim(2);
    std::vector<double> out(N * L * C);
    const auto& sv = seq.node()->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l)
            std::copy_n(sv.data() + (n * L + (L - 1 - l)) * C, C, out.data() + (n * L + l) * C);
    auto ns = seq.node_ptr();
    return make_result(
        seq.shape(), std::move(out), {seq},
        [ns, N, L, C](Node& self) {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t l = 0; l < L; ++l)
                    for (std::size_t c = 0; c < C; ++c)
                        ns->grad[(n * L + (L - 1 - l)) * C + c] += self.grad[(n * L + l) * C + c];
        },
        "reverse_seq");
}

Tensor linear(const Tensor& seq, const Tensor& weight, const Tensor& bias) {
    require_rank(seq, 3, "linear input");
    require_rank(weight, 2, "linear weight");
    const std::size_t N = seq.dim(0), L = seq.dim(1), Cin = seq.dim(2), Cout = weight.dim(1);
    if (weight.dim(0) != Cin)
        throw ShapeError("linear: input features " + std::to_string(Cin) + " != weight dimension 0 (" +
                         std::to_string(weight.dim(0)) + ")");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
        throw ShapeError("linear: bias must have shape (" + std::to_string(Cout) + ")");
    const std::size_t R = N * L;
    std::vector<double> out(R * Cout, 0.0);
    const auto& xv = seq.node()->value;
    const auto& wv = weight.node()->value;
    for (std::size_t r = 0; r < R; ++r) {
        double* o = out.data() + r * Cout;
        if (bias.defined()) std::copy_n(bias.data().data(), Cout, o);
        for (std::size_t i = 0; i < Cin; ++i) {
            const double xi = xv[r * Cin + i];
            const double* wr = wv.data() + i * Cout;
            for (std::size_t j = 0; j < Cout; ++j) o[j] += xi * wr[j];
        }
    }
    auto nx = seq.node_ptr(), nw = weight.node_ptr();
    NodePtr nb = bias.defined() ? bias.node_ptr() : nullptr;
    return make_result(
        {N, L, Cout}, std::move(out), {seq, weight, bias},
        [nx, nw, nb, R, Cin, Cout](Node& self) {
            for (std::size_t r = 0; r < R; ++r) {
                const double* g = self.grad.data() + r * Cout;
                if (nb && nb->requires_grad)
                    for (std::size_t j = 0; j < Cout; ++j) nb->grad[j] += g[j];
                for (std::size_t i = 0; i < Cin; ++i) {
                    const double* wr = nw->value.data() + i * Cout;
                    if (nx->requires_grad) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < Cout; ++j) acc += g[j] * wr[j];
                        nx->grad[r * Cin + i] += acc;
                    }
                    if (nw->requires_grad) {
                        const double xi = nx->value[r * Cin + i];
                        double* gw = nw->grad.data() + i * Cout;
                        for (std::size_t j = 0; j < Cout; ++j) gw[j] += xi * g[j];
                    }
                }
            }
        },
        "linear");
}

Tensor headwise_linear(const Tensor& seq, const Tensor& weight) {
    require_rank(seq, 3, "headwise_linear input");
    require_rank(weight, 3, "headwise_linear weight");
    const std::size_t N = seq.dim(0), L = seq.dim(1), D = seq.dim(2);
    const std::size_t Hd = weight.dim(0), din = weight.dim(1), dout = weight.dim(2);
    if (Hd * din != D)
        throw ShapeError("headwise_linear: heads*din = " + std::to_string(Hd * din) + " != input features " +
                         std::to_string(D));
    const std::size_t R = N * L, Do = Hd * dout;
    std::vector<double> out(R * Do, 0.0);
    const auto& xv = seq.node()->value;
    const auto& wv = weight.node()->value;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t h = 0; h < Hd; ++h) {
            double* o = out.data() + r * Do + h * dout;
            for (std::size_t i = 0; i < din; ++i) {
                const double xi = xv[r * D + h * din + i];
                const double* wr = wv.data() + (h * din + i) * dout;
                for (std::size_t j = 0; j < dout; ++j) o[j] += xi * wr[j];
            }
        }
    auto nx = seq.node_ptr(), nw = weight.node_ptr();
    return make_result(
        {N, L, Do}, std::move(out), {seq, weight},
        [nx, nw, R, D, Do, Hd, din, dout](Node& self) {
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t h = 0; h < Hd; ++h) {
                    const double* g = self.grad.data() + r * Do + h * dout;
                    for (std::size_t i = 0; i < din; ++i) {
                        const std::size_t xi_idx = r * D + h * din + i;
                        const double* wr = nw->value.data() + (h * din + i) * dout;
                        if (nx->requires_grad) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < dout; ++j) acc += g[j] * wr[j];
                            nx->grad[xi_idx] += acc;
                        }
                        if (nw->requires_grad) {
                            double* gw = nw->grad.data() + (h * din + i) * dout;
                            const double xi = nx->value[xi_idx];
                            for (std::size_t j = 0; j < dout; ++j) gw[j] += xi * g[j];
                        }
                    }
                }
        },
        "headwise_linear");
}

Tensor layer_norm(const Tensor& seq, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(seq, 3, "layer_norm");
    const std::size_t C = seq.dim(2), R = seq.dim(0) * seq.dim(1);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(C) + " entries");
    std::vector<double> out(R * C), xhat(R * C), rstd(R);
    const auto& xv = seq.node()->value;
    const auto& gv = gamma.node()->value;
    const auto& bv = beta.node()->value;
    for (std::size_t r = 0; r < R; ++r) {
        const double* x = xv.data() + r * C;
        double mu = 0.0;
        for (std::size_t c = 0; c < C; ++c) mu += x[c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
        var /= static_cast<double>(C);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < C; ++c) {
            xhat[r * C + c] = (x[c] - mu) * rstd[r];
            out[r * C + c] = xhat[r * C + c] * gv[c] + bv[c];
        }
    }
    auto nx = seq.node_ptr(), ng = gamma.node_ptr(), nb = beta.node_ptr();
    return make_result(
        seq.shape(), std::move(out), {seq, gamma, beta},
        [nx, ng, nb, xhat = std::move(xhat), rstd = std::move(rstd), R, C](Node& self) {
            const double invC = 1.0 / static_cast<double>(C);
            for (std::size_t r = 0; r < R; ++r) {
                const double* g = self.grad.data() + r * C;
                const double* xh = xhat.data() + r * C;
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double gx = g[c] * ng->value[c];
                    s1 += gx;
                    s2 += gx * xh[c];
                    if (ng->requires_grad) ng->grad[c] += g[c] * xh[c];
                    if (nb->requires_grad) nb->grad[c] += g[c];
                }
                if (nx->requires_grad)
                    for (std::size_t c = 0; c < C; ++c) {
                        const double gx = g[c] * ng->value[c];
                        nx->grad[r * C + c] += rstd[r] * (gx - invC * s1 - xh[c] * invC * s2);
                    }
            }
        },
        "layer_norm");
}

Tensor causal_conv1d(const Tensor& seq, const Tensor& kernel, const Tensor& bias) {
    require_rank(seq, 3, "causal_conv1d input");
    require_rank(kernel, 2, "causal_conv1d kernel");
    const std::size_t N = seq.dim(0), L = seq.dim(1), C = seq.dim(2), K = kernel.dim(1);
    if (kernel.dim(0) != C)
        throw ShapeError("causal_conv1d: kernel dimension 0 is " + std::to_string(kernel.dim(0)) +
                         ", expected channel count " + std::to_string(C));
    if (bias.defined() && bias.numel() != C) throw ShapeError("causal_conv1d: bias must have C entries");
    std::vector<double> out(N * L * C, 0.0);
    const auto& xv = seq.node()->value;
    const auto& kv = kernel.node()->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t t = 0; t < L; ++t) {
            double* o = out.data() + (n * L + t) * C;
            if (bias.defined()) std::copy_n(bias.data().data(), C, o);
            for (std::size_t j = 0; j < K; ++j) {
                // Tap j reads position t - (K - 1 - j).
                const std::size_t back = K - 1 - j;
                if (back > t) continue;
                const double* x = xv.data() + (n * L + t - back) * C;
                for (std::size_t c = 0; c < C; ++c) o[c] += kv[c * K + j] * x[c];
            }
        }
    auto nx = seq.node_ptr(), nk = kernel.node_ptr();
    NodePtr nb = bias.defined() ? bias.node_ptr() : nullptr;
    return make_result(
        seq.shape(), std::move(out), {seq, kernel, bias},
        [nx, nk, nb, N, L, C, K](Node& self) {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t t = 0; t < L; ++t) {
                    const double* g = self.grad.data() + (n * L + t) * C;
                    if (nb && nb->requires_grad)
                        for (std::size_t c = 0; c < C; ++c) nb->grad[c] += g[c];
                    for (std::size_t j = 0; j < K; ++j) {
                        const std::size_t back = K - 1 - j;
                        if (back > t) continue;
                        const std::size_t xo = (n * L + t - back) * C;
                        for (std::size_t c = 0; c < C; ++c) {
                            if (nx->requires_grad) nx->grad[xo + c] += g[c] * nk->value[c * K + j];
                            if (nk->requires_grad) nk->grad[c * K + j] += g[c] * nx->value[xo + c];
                        }
                    }
                }
        },
        "causal_conv1d");
}

namespace {

void check_attention_shapes(const Tensor& q, const Tensor& k, std::size_t heads) {
    require_rank(q, 3, "attention query");
    require_rank(k, 3, "attention key");
    if (q.dim(0) != k.dim(0)) throw ShapeError("attention: batch dimension differs between query and key");
    if (q.dim(2) != k.dim(2)) throw ShapeError("attention: query/key embedding dimension 2 differs");
    if (heads == 0 || q.dim(2) % heads != 0)
        throw ShapeError("attention: embedding " + std::to_string(q.dim(2)) + " not divisible by heads");
}

// P[n, h, i, :] = softmax_j(scale * q_i . k_j) over head h's slice.
std::vector<double> softmax_scores(const std::vector<double>& qv, const std::vector<double>& kv, std::size_t N,
                                   std::size_t Lq, std::size_t Lk, std::size_t D, std::size_t heads) {
    const std::size_t dh = D / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> P(N * heads * Lq * Lk);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < Lq; ++i) {
                double* row = P.data() + ((n * heads + h) * Lq + i) * Lk;
                const double* qi = qv.data() + (n * Lq + i) * D + h * dh;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < Lk; ++j) {
                    const double* kj = kv.data() + (n * Lk + j) * D + h * dh;
                    double s = 0.0;
                    for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
                    row[j] = s * sc;
                    mx = std::max(mx, row[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < Lk; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    z += row[j];
                }
                for (std::size_t j = 0; j < Lk; ++j) row[j] /= z;
            }
    return P;
}

}  // namespace

std::vector<double> attention_probs(const Tensor& q, const Tensor& k, std::size_t heads) {
    check_attention_shapes(q, k, heads);
    return softmax_scores(q.node()->value, k.node()->value, q.dim(0), q.dim(1), k.dim(1), q.dim(2), heads);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    check_attention_shapes(q, k, heads);
    require_rank(v, 3, "attention value");
    if (v.dim(0) != k.dim(0) || v.dim(1) != k.dim(1))
        throw ShapeError("attention: value batch/length must match key " + shape_str(k.shape()));
    if (v.dim(2) % heads != 0) throw ShapeError("attention: value dimension 2 not divisible by heads");
    const std::size_t N = q.dim(0), Lq = q.dim(1), Lk = k.dim(1), D = q.dim(2), Dv = v.dim(2);
    const std::size_t dh = D / heads, dvh = Dv / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    auto P = softmax_scores(q.node()->value, k.node()->value, N, Lq, Lk, D, heads);
    std::vector<double> out(N * Lq * Dv, 0.0);
    const auto& vv = v.node()->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < Lq; ++i) {
                const double* row = P.data() + ((n * heads + h) * Lq + i) * Lk;
                double* o = out.data() + (n * Lq + i) * Dv + h * dvh;
                for (std::size_t j = 0; j < Lk; ++j) {
                    const double* vj = vv.data() + (n * Lk + j) * Dv + h * dvh;
                    for (std::size_t d = 0; d < dvh; ++d) o[d] += row[j] * vj[d];
                }
            }
    auto nq = q.node_ptr(), nk = k.node_ptr(), nv = v.node_ptr();
    return make_result(
        {N, Lq, Dv}, std::move(out), {q, k, v},
        [nq, nk, nv, P = std::move(P), N, Lq, Lk, D, Dv, heads, dh, dvh, sc](Node& self) {
            std::vector<double> dP(Lk);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t i = 0; i < Lq; ++i) {
                        const double* row = P.data() + ((n * heads + h) * Lq + i) * Lk;
                        const double* g = self.grad.data() + (n * Lq + i) * Dv + h * dvh;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < Lk; ++j) {
                            const double* vj = nv->value.data() + (n * Lk + j) * Dv + h * dvh;
                            double s = 0.0;
                            for (std::size_t d = 0; d < dvh; ++d) s += g[d] * vj[d];
                            dP[j] = s;
                            dot += s * row[j];
                            if (nv->requires_grad) {
                                double* gv = nv->grad.data() + (n * Lk + j) * Dv + h * dvh;
                                for (std::size_t d = 0; d < dvh; ++d) gv[d] += row[j] * g[d];
                            }
                        }
                        const double* qi = nq->value.data() + (n * Lq + i) * D + h * dh;
                        double* gq = nq->requires_grad ? nq->grad.data() + (n * Lq + i) * D + h * dh : nullptr;
                        for (std::size_t j = 0; j < Lk; ++j) {
                            const double dS = row[j] * (dP[j] - dot) * sc;
                            const double* kj = nk->value.data() + (n * Lk + j) * D + h * dh;
                            if (gq)
                                for (std::size_t d = 0; d < dh; ++d) gq[d] += dS * kj[d];
                            if (nk->requires_grad) {
                                double* gk = nk->grad.data() + (n * Lk + j) * D + h * dh;
                                for (std::size_t d = 0; d < dh; ++d) gk[d] += dS * qi[d];
                            }
                        }
                    }
        },
        "attention");
}

}  // namespace cdx
