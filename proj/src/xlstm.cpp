#include "cdx/xlstm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cdx/ops.hpp"

namespace cdx::xlstm {

MLSTMState MLSTMState::zeros(std::size_t heads, std::size_t dk, std::size_t dv) {
    MLSTMState s;
    s.heads = heads;
    s.dk = dk;
    s.dv = dv;
    s.C.assign(heads * dv * dk, 0.0);
    s.n.assign(heads * dk, 0.0);
    s.m.assign(heads, 0.0);
    return s;
}

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct BranchTape {
    PinNormalizerBranches::Mode mode = PinNormalizerBranches::Mode::Off;
    std::vector<char> on_floor;
    std::size_t cursor = 0;
};
thread_local BranchTape tape;

// Chooses the floor branch of the readout denominator, or replays a pinned
// choice.
bool use_floor(double abs_nq, double floor) {
    switch (tape.mode) {
        case PinNormalizerBranches::Mode::Off:
            return abs_nq < floor;
        case PinNormalizerBranches::Mode::Record:
            tape.on_floor.push_back(abs_nq < floor);
            return abs_nq < floor;
        case PinNormalizerBranches::Mode::Replay:
            if (tape.cursor >= tape.on_floor.size())
                throw std::logic_error("PinNormalizerBranches: replay ran past the recorded scan");
            return tape.on_floor[tape.cursor++] != 0;
    }
    return abs_nq < floor;
}

// Shared by mlstm_step and the scan. Writes h, the ungated h~ and the
// per-head denominators.
void step_into(MLSTMState& s, const double* q, const double* k, const double* v, const double* ig, const double* fg,
               const double* og, double* h, double* htilde, double* den, char* on_floor) {
    const std::size_t dk = s.dk, dv = s.dv;
    for (std::size_t hd = 0; hd < s.heads; ++hd) {
        const double m_prev = s.m[hd];
        const double m_new = std::max(fg[hd] + m_prev, ig[hd]);
        const double fa = std::exp(fg[hd] + m_prev - m_new);
        const double ia = std::exp(ig[hd] - m_new);
        s.m[hd] = m_new;
        const double* qh = q + hd * dk;
        const double* kh = k + hd * dk;
        const double* vh = v + hd * dv;
        double* C = s.C.data() + hd * dv * dk;
        double* n = s.n.data() + hd * dk;
        double nq = 0.0;
        for (std::size_t b = 0; b < dk; ++b) {
            n[b] = fa * n[b] + ia * kh[b];
            nq += n[b] * qh[b];
        }
        const bool fl = use_floor(std::abs(nq), std::exp(-m_new));
        const double d = fl ? std::exp(-m_new) : std::abs(nq);
        den[hd] = d;
        if (on_floor) on_floor[hd] = fl;
        for (std::size_t a = 0; a < dv; ++a) {
            double* row = C + a * dk;
            const double va = ia * vh[a];
            double acc = 0.0;
            for (std::size_t b = 0; b < dk; ++b) {
                row[b] = fa * row[b] + va * kh[b];
                acc += row[b] * qh[b];
            }
            const double ht = acc / d;
            htilde[hd * dv + a] = ht;
            h[hd * dv + a] = sigm(og[hd * dv + a]) * ht;
        }
    }
}

}  // namespace

std::vector<double> mlstm_step(MLSTMState& state, std::span<const double> q, std::span<const double> k,
                               std::span<const double> v, std::span<const double> igate,
                               std::span<const double> fgate, std::span<const double> ogate) {
    const std::size_t H = state.heads;
    if (q.size() != H * state.dk || k.size() != H * state.dk)
        throw ShapeError("mlstm_step: q/k must have heads*dk = " + std::to_string(H * state.dk) + " entries");
    if (v.size() != H * state.dv || ogate.size() != H * state.dv)
        throw ShapeError("mlstm_step: v/ogate must have heads*dv = " + std::to_string(H * state.dv) + " entries");
    if (igate.size() != H || fgate.size() != H) throw ShapeError("mlstm_step: gate preactivations need one per head");
    std::vector<double> h(H * state.dv), ht(H * state.dv), den(H);
    step_into(state, q.data(), k.data(), v.data(), igate.data(), fgate.data(), ogate.data(), h.data(), ht.data(),
              den.data(), nullptr);
    return h;
}

PinNormalizerBranches::PinNormalizerBranches() {
    if (tape.mode != Mode::Off) throw std::logic_error("PinNormalizerBranches: already active on this thread");
    tape = BranchTape{};
}

PinNormalizerBranches::~PinNormalizerBranches() { tape = BranchTape{}; }

void PinNormalizerBranches::begin() {
    tape.mode = recorded_ ? Mode::Replay : Mode::Record;
    recorded_ = true;
    tape.cursor = 0;
}

PinNormalizerBranches::Mode PinNormalizerBranches::mode() const { return tape.mode; }

std::size_t PinNormalizerBranches::floor_count() const {
    return static_cast<std::size_t>(std::count(tape.on_floor.begin(), tape.on_floor.end(), 1));
}

std::size_t PinNormalizerBranches::recorded() const { return tape.on_floor.size(); }

Tensor mlstm_scan(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& igate, const Tensor& fgate,
                  const Tensor& ogate, std::size_t heads) {
    for (const Tensor* t : {&q, &k, &v, &igate, &fgate, &ogate})
        if (t->rank() != 3) throw ShapeError("mlstm_scan: inputs must be rank 3 (N, L, *)");
    const std::size_t N = q.dim(0), L = q.dim(1), D = q.dim(2), Dv = v.dim(2);
    if (heads == 0 || D % heads || Dv % heads) throw ShapeError("mlstm_scan: feature dims not divisible by heads");
    if (k.shape() != q.shape()) throw ShapeError("mlstm_scan: key shape differs from query shape");
    if (v.dim(0) != N || v.dim(1) != L || ogate.shape() != v.shape())
        throw ShapeError("mlstm_scan: value/output-gate shape mismatch");
    const Shape gshape{N, L, heads};
    if (igate.shape() != gshape || fgate.shape() != gshape)
        throw ShapeError("mlstm_scan: gate preactivations must be " + shape_str(gshape));
    const std::size_t dk = D / heads, dv = Dv / heads;
    const std::size_t csz = heads * dv * dk;

    std::vector<double> out(N * L * Dv);
    // Saved for backward: memory, normalizer, stabilizer, denominators and h~.
    std::vector<double> Cs(N * L * csz), ns(N * L * heads * dk), ms(N * L * heads), dens(N * L * heads),
        hts(N * L * Dv);
    std::vector<char> flo(N * L * heads);
    const auto& qv = q.node()->value;
    const auto& kv = k.node()->value;
    const auto& vv = v.node()->value;
    const auto& iv = igate.node()->value;
    const auto& fv = fgate.node()->value;
    const auto& ov = ogate.node()->value;
    for (std::size_t n = 0; n < N; ++n) {
        auto st = MLSTMState::zeros(heads, dk, dv);
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t r = n * L + t;
            step_into(st, qv.data() + r * D, kv.data() + r * D, vv.data() + r * Dv, iv.data() + r * heads,
                      fv.data() + r * heads, ov.data() + r * Dv, out.data() + r * Dv, hts.data() + r * Dv,
                      dens.data() + r * heads, flo.data() + r * heads);
            std::copy(st.C.begin(), st.C.end(), Cs.begin() + static_cast<long>(r * csz));
            std::copy(st.n.begin(), st.n.end(), ns.begin() + static_cast<long>(r * heads * dk));
            std::copy(st.m.begin(), st.m.end(), ms.begin() + static_cast<long>(r * heads));
        }
    }

    auto nq = q.node_ptr(), nk = k.node_ptr(), nv = v.node_ptr(), ni = igate.node_ptr(), nf = fgate.node_ptr(),
         no = ogate.node_ptr();
    return make_result(
        {N, L, Dv}, std::move(out), {q, k, v, igate, fgate, ogate},
        [=, Cs = std::move(Cs), ns = std::move(ns), ms = std::move(ms), dens = std::move(dens),
         hts = std::move(hts), flo = std::move(flo)](Node& self) {
            // The output is invariant to the stabilizer sequence, so m is
            // treated as a constant when differentiating.
            auto gbuf = [](const NodePtr& p) { return p->requires_grad ? p->grad.data() : nullptr; };
            double* gq = gbuf(nq);
            double* gk = gbuf(nk);
            double* gv = gbuf(nv);
            double* gi = gbuf(ni);
            double* gf = gbuf(nf);
            double* go = gbuf(no);
            std::vector<double> dC(dv * dk), dn(dk), gnum(dv);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t hd = 0; hd < heads; ++hd) {
                    std::fill(dC.begin(), dC.end(), 0.0);
                    std::fill(dn.begin(), dn.end(), 0.0);
                    for (std::size_t tt = L; tt-- > 0;) {
                        const std::size_t r = n * L + tt;
                        const double* C = Cs.data() + r * csz + hd * dv * dk;
                        const double* nvec = ns.data() + (r * heads + hd) * dk;
                        const double m_t = ms[r * heads + hd];
                        const double m_prev = tt ? ms[(r - 1) * heads + hd] : 0.0;
                        const double den = dens[r * heads + hd];
                        const double* qh = nq->value.data() + r * D + hd * dk;
                        const double* kh = nk->value.data() + r * D + hd * dk;
                        const double* vh = nv->value.data() + r * Dv + hd * dv;
                        const double* ht = hts.data() + r * Dv + hd * dv;
                        const double* og = no->value.data() + r * Dv + hd * dv;
                        const double* gh = self.grad.data() + r * Dv + hd * dv;

                        // Output gate and normalized readout.
                        double gden = 0.0;
                        for (std::size_t a = 0; a < dv; ++a) {
                            const double o = sigm(og[a]);
                            if (go) go[r * Dv + hd * dv + a] += gh[a] * ht[a] * o * (1.0 - o);
                            const double ght = gh[a] * o;
                            gnum[a] = ght / den;
                            gden -= ght * ht[a] / den;
                        }
                        double nq_dot = 0.0;
                        for (std::size_t b = 0; b < dk; ++b) nq_dot += nvec[b] * qh[b];
                        const double gs = flo[r * heads + hd] ? 0.0 : gden * (nq_dot >= 0.0 ? 1.0 : -1.0);
                        for (std::size_t b = 0; b < dk; ++b) {
                            double acc = gs * nvec[b];
                            for (std::size_t a = 0; a < dv; ++a) {
                                acc += C[a * dk + b] * gnum[a];
                                dC[a * dk + b] += gnum[a] * qh[b];
                            }
                            if (gq) gq[r * D + hd * dk + b] += acc;
                            dn[b] += gs * qh[b];
                        }

                        // Memory update C_t = fa C_{t-1} + ia v k^T.
                        const double fa = std::exp(nf->value[r * heads + hd] + m_prev - m_t);
                        const double ia = std::exp(ni->value[r * heads + hd] - m_t);
                        const double* Cp = tt ? Cs.data() + (r - 1) * csz + hd * dv * dk : nullptr;
                        const double* np = tt ? ns.data() + ((r - 1) * heads + hd) * dk : nullptr;
                        double dia = 0.0, dfa = 0.0;
                        for (std::size_t b = 0; b < dk; ++b) {
                            dia += dn[b] * kh[b];
                            if (np) dfa += dn[b] * np[b];
                            double gkb = ia * dn[b];
                            for (std::size_t a = 0; a < dv; ++a) gkb += ia * dC[a * dk + b] * vh[a];
                            if (gk) gk[r * D + hd * dk + b] += gkb;
                        }
                        for (std::size_t a = 0; a < dv; ++a) {
                            double rowk = 0.0;
                            for (std::size_t b = 0; b < dk; ++b) {
                                rowk += dC[a * dk + b] * kh[b];
                                if (Cp) dfa += dC[a * dk + b] * Cp[a * dk + b];
                            }
                            dia += rowk * vh[a];
                            if (gv) gv[r * Dv + hd * dv + a] += ia * rowk;
                        }
                        if (gi) gi[r * heads + hd] += dia * ia;
                        if (gf) gf[r * heads + hd] += dfa * fa;
                        for (auto& x : dC) x *= fa;
                        for (auto& x : dn) x *= fa;
                    }
                }
        },
        "mlstm_scan");
}

MLSTMBlock::MLSTMBlock(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads, Rng& rng) {
    const std::size_t inner = 2 * dim;
    if (heads == 0 || inner % heads) throw ShapeError("mlstm block: inner dim " + std::to_string(inner) +
                                                      " not divisible by heads " + std::to_string(heads));
    const std::size_t dh = inner / heads;
    p_.dim = dim;
    p_.inner = inner;
    p_.heads = heads;
    auto P = [&](const char* n) { return prefix + "." + n; };
    p_.norm_scale = store.add(P("norm_scale"), {dim}, Init::Ones, rng);
    p_.norm_shift = store.add(P("norm_shift"), {dim}, Init::Zeros, rng);
    p_.up_x = store.add(P("up_x"), {dim, inner}, Init::FanInUniform, rng, dim);
    p_.up_z = store.add(P("up_z"), {dim, inner}, Init::FanInUniform, rng, dim);
    p_.conv_kernel = store.add(P("conv_kernel"), {inner, kCausalConvWidth}, Init::FanInUniform, rng,
                               kCausalConvWidth);
    p_.conv_bias = store.add(P("conv_bias"), {inner}, Init::Zeros, rng);
    p_.proj_q = store.add(P("proj_q"), {heads, dh, dh}, Init::FanInUniform, rng, dh);
    p_.proj_k = store.add(P("proj_k"), {heads, dh, dh}, Init::FanInUniform, rng, dh);
    p_.proj_v = store.add(P("proj_v"), {heads, dh, dh}, Init::FanInUniform, rng, dh);
    p_.igate_w = store.add(P("igate_w"), {3 * inner, heads}, Init::FanInUniform, rng, 3 * inner);
    p_.igate_b = store.add(P("igate_b"), {heads}, Init::Zeros, rng);
    p_.fgate_w = store.add(P("fgate_w"), {3 * inner, heads}, Init::FanInUniform, rng, 3 * inner);
    p_.fgate_b = store.add(P("fgate_b"), {heads}, Init::Zeros, rng);
    p_.ogate_w = store.add(P("ogate_w"), {inner, inner}, Init::FanInUniform, rng, inner);
    p_.ogate_b = store.add(P("ogate_b"), {inner}, Init::Zeros, rng);
    p_.skip = store.add(P("skip"), {inner}, Init::Ones, rng);
    p_.down = store.add(P("down"), {inner, dim}, Init::FanInUniform, rng, inner);
    p_.down_b = store.add(P("down_b"), {dim}, Init::Zeros, rng);
}

Tensor MLSTMBlock::forward(const Tensor& seq) const {
    if (seq.rank() != 3 || seq.dim(2) != p_.dim)
        throw ShapeError("mlstm block: expected (N, L, " + std::to_string(p_.dim) + "), got " + shape_str(seq.shape()));
    const Tensor none;
    Tensor u = layer_norm(seq, p_.norm_scale, p_.norm_shift);
    Tensor a = linear(u, p_.up_x, none);
    Tensor z = linear(u, p_.up_z, none);
    Tensor c = silu(causal_conv1d(a, p_.conv_kernel, p_.conv_bias));
    const double kscale = 1.0 / std::sqrt(static_cast<double>(p_.inner / p_.heads));
    Tensor q = headwise_linear(c, p_.proj_q);
    Tensor k = scale(headwise_linear(c, p_.proj_k), kscale);
    Tensor v = headwise_linear(a, p_.proj_v);
    Tensor qkv = concat(concat(q, k, 2), v, 2);
    Tensor ig = linear(qkv, p_.igate_w, p_.igate_b);
    Tensor fg = linear(qkv, p_.fgate_w, p_.fgate_b);
    Tensor og = linear(a, p_.ogate_w, p_.ogate_b);
    Tensor h = mlstm_scan(q, k, v, ig, fg, og, p_.heads);
    Tensor skip = reshape(p_.skip, {1, 1, p_.inner});
    Tensor y = mul(add(h, mul(c, skip)), silu(z));
    return add(seq, linear(y, p_.down, p_.down_b));
}

Tensor BiMLSTM::forward(const Tensor& seq) const {
    return add(block_.forward(seq), reverse_seq(block_.forward(reverse_seq(seq))));
}

}  // namespace cdx::xlstm
