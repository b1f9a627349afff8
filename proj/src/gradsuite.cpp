#include "cdx/gradsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cdx/enhancer.hpp"
#include "cdx/fusion.hpp"
#include "cdx/gradcheck.hpp"
#include "cdx/layers.hpp"
#include "cdx/model.hpp"
#include "cdx/ops.hpp"
#include "cdx/training.hpp"
#include "cdx/xlstm.hpp"

namespace cdx {
namespace {

Tensor rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

// Fixed random projection so tensor-valued outputs reduce to a scalar.
Tensor project(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed ^ 0x5eedULL);
    const double amp = std::sqrt(3.0 / static_cast<double>(y.numel()));
    std::vector<double> w(y.numel());
    for (auto& x : w) x = rng.uniform(-amp, amp);
    return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

std::vector<Tensor> with_params(std::vector<Tensor> in, const ParamStore& store) {
    for (const auto& p : store.params()) in.push_back(p.value);
    return in;
}

void jitter(ParamStore& store, Rng& rng, double amp) {
    for (auto p : store.params())
        for (auto& v : p.value.data_mut()) v = rng.uniform(-amp, amp);
}

class Runner {
public:
    Runner(std::vector<GradSuiteEntry>& out, const std::function<void(const GradSuiteEntry&)>& cb) : out_(out), cb_(cb) {}

    void run(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> in,
             const GradCheckOptions& opts = {}) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto rep = grad_check(f, std::move(in), opts);
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        auto it = std::find_if(out_.begin(), out_.end(), [&](const GradSuiteEntry& e) { return e.name == name; });
        if (it == out_.end()) {
            out_.push_back({name, 0.0, 0, 0.0, {}});
            it = out_.end() - 1;
        }
        if (rep.max_rel_error >= it->max_rel_error) {
            it->max_rel_error = rep.max_rel_error;
            it->worst = rep.worst;
        }
        it->coords += rep.coords_checked;
        it->seconds += dt;
    }

    void flush_from(std::size_t first) {
        if (!cb_) return;
        for (std::size_t i = first; i < out_.size(); ++i) cb_(out_[i]);
    }

    std::size_t size() const { return out_.size(); }

private:
    std::vector<GradSuiteEntry>& out_;
    const std::function<void(const GradSuiteEntry&)>& cb_;
};

void op_checks(Runner& r, std::size_t seeds) {
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        Rng rng(100 + seed);
        auto x = rand_t({2, 3, 4, 4}, rng);
        auto y = rand_t({2, 1, 4, 4}, rng);
        auto w = rand_t({4, 3, 3, 3}, rng);
        auto dw = rand_t({3, 1, 3, 3}, rng);
        auto pw = rand_t({4, 3, 1, 1}, rng);
        auto b = rand_t({4}, rng);
        auto b3 = rand_t({3}, rng);
        auto seq = rand_t({2, 5, 6}, rng);
        auto lw = rand_t({6, 4}, rng);
        auto hw = rand_t({2, 3, 3}, rng);
        auto g = rand_t({6}, rng, 0.5, 1.5);
        auto be = rand_t({6}, rng);
        auto ck = rand_t({6, 4}, rng);
        auto kv = rand_t({2, 7, 6}, rng);
        auto z = rand_t({2, 1, 4, 4}, rng, -3, 3);
        std::vector<double> yv(32);
        for (auto& v : yv) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
        const auto target = Tensor::from({2, 1, 4, 4}, yv);

        r.run("add/sub/mul", [&] { return project(mul(sub(x, y), add(x, y)), seed); }, {x, y});
        r.run("scale", [&] { return project(scale(x, -1.7), seed); }, {x});
        r.run("sigmoid", [&] { return project(sigmoid(x), seed); }, {x});
        r.run("silu", [&] { return project(silu(x), seed); }, {x});
        r.run("sum/mean", [&] { return add(mean(mul(x, x)), scale(sum(mul(y, y)), 0.1)); }, {x, y});
        r.run("concat", [&] { return project(concat_channels(x, y), seed); }, {x, y});
        r.run("reshape", [&] { return project(mul(reshape(x, {2, 48}), reshape(x, {2, 48})), seed); }, {x});
        r.run("conv2d", [&] { return project(conv2d(x, w, b, 2, 1), seed); }, {x, w, b});
        r.run("conv2d depthwise", [&] { return project(conv2d(x, dw, Tensor(), 1, 1, 3), seed); }, {x, dw});
        r.run("dsconv", [&] { return project(dsconv(x, dw, b3, pw, b), seed); }, {x, dw, b3, pw, b});
        r.run("bilinear_upsample", [&] { return project(bilinear_upsample(x, 2), seed); }, {x});
        r.run("axial_avgpool", [&] {
            return add(project(axial_avgpool(x, Axis::Height), seed), project(axial_avgpool(x, Axis::Width), seed + 1));
        }, {x});
        r.run("raster/reverse", [&] { return project(raster_unflatten(reverse_seq(raster_flatten(x)), 4, 4), seed); }, {x});
        r.run("linear", [&] { return project(linear(seq, lw, Tensor()), seed); }, {seq, lw});
        r.run("headwise_linear", [&] { return project(headwise_linear(seq, hw), seed); }, {seq, hw});
        r.run("layer_norm", [&] { return project(layer_norm(seq, g, be), seed); }, {seq, g, be});
        r.run("causal_conv1d", [&] { return project(causal_conv1d(seq, ck, be), seed); }, {seq, ck, be});
        r.run("attention", [&] { return project(attention(seq, kv, kv, 2), seed); }, {seq, kv});
        r.run("bce+dice", [&] { return total_loss(z, target); }, {z});

        auto q = rand_t({2, 6, 8}, rng), k = rand_t({2, 6, 8}, rng), v = rand_t({2, 6, 8}, rng);
        auto ig = rand_t({2, 6, 2}, rng, -2, 2), fg = rand_t({2, 6, 2}, rng, -2, 2);
        auto og = rand_t({2, 6, 8}, rng);
        // Steep coordinates near the readout floor want a short step; the
        // scale-invariant first readout has exactly-zero q gradients that a
        // very short step buries in roundoff. 3e-4 sits between the two.
        GradCheckOptions scan_opts;
        scan_opts.eps = 3e-4;
        r.run("mlstm_scan", [&] { return project(xlstm::mlstm_scan(q, k, v, ig, fg, og, 2), seed); },
              {q, k, v, ig, fg, og}, scan_opts);
    }
}

void module_checks(Runner& r, std::size_t seeds) {
    constexpr std::size_t kC = 8;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        {
            Rng rng(10 + seed);
            ParamStore store;
            xlstm::BiMLSTM phi(store, "phi", kC, 4, rng);
            auto x = rand_t({1, 6, kC}, rng, -0.5, 0.5);
            r.run("bi_mlstm", [&] { return project(phi.forward(x), seed); }, with_params({x}, store));
        }
        for (int kind = 0; kind < 2; ++kind) {
            // Branches of the readout floor are pinned at the base point.
            Rng rng(40 + 2 * seed + static_cast<std::uint64_t>(kind));
            ParamStore store;
            StageEnhancer e = kind == 0 ? StageEnhancer(CTGP(store, "e", kC, 4, rng))
                                        : StageEnhancer(CTSR(store, "e", kC, 4, rng));
            auto f1 = rand_t({1, kC, 8, 8}, rng, -0.5, 0.5), f2 = rand_t({1, kC, 8, 8}, rng, -0.5, 0.5);
            GradCheckOptions opts;
            opts.eps = 1e-4;
            opts.max_coords_per_tensor = 12;
            opts.seed = seed;
            xlstm::PinNormalizerBranches pin;
            r.run(kind == 0 ? "ctgp" : "ctsr",
                  [&] {
                      pin.begin();
                      return project(enhance(e, f1, f2), seed);
                  },
                  with_params({f1, f2}, store), opts);
        }
        {
            Rng rng(50 + seed);
            ParamStore store;
            CSIF m(store, "csif", kC, 2, rng);
            DecodeHead head(store, "head", kC, rng);
            jitter(store, rng, 0.5);
            auto rh = rand_t({1, kC, 4, 4}, rng), rl = rand_t({1, kC, 2, 2}, rng);
            r.run("csif+head", [&] { return project(head.forward(m.forward(rh, rl)), seed); },
                  with_params({rh, rl}, store));
        }
    }
}

void model_check(Runner& r, const GradSuiteOptions& o) {
    if (o.model_size == 0 || o.model_size % 32 != 0)
        throw std::invalid_argument("gradient suite: model size must be a positive multiple of 32");
    Rng rng(1000 + o.model_seed);
    ParamStore store;
    ChangeDetector model(o.model, store, rng);
    const std::size_t s = o.model_size;
    auto a = rand_t({1, 3, s, s}, rng, 0, 1), b = rand_t({1, 3, s, s}, rng, 0, 1);
    std::vector<double> yv(s * s);
    for (auto& v : yv) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const auto y = Tensor::from({1, 1, s, s}, std::move(yv));
    GradCheckOptions opts;
    opts.max_coords_per_tensor = o.model_coords;
    opts.seed = o.model_seed;
    r.run("model " + std::to_string(s) + "x" + std::to_string(s), [&] { return total_loss(model.forward(a, b), y); },
          with_params({a, b}, store), opts);
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& opts,
                                           const std::function<void(const GradSuiteEntry&)>& on_entry) {
    if (opts.seeds == 0) throw std::invalid_argument("gradient suite: seeds must be positive");
    std::vector<GradSuiteEntry> out;
    Runner r(out, on_entry);
    op_checks(r, opts.seeds);
    r.flush_from(0);
    std::size_t mark = r.size();
    module_checks(r, opts.seeds);
    r.flush_from(mark);
    if (opts.include_model) {
        mark = r.size();
        model_check(r, opts);
        r.flush_from(mark);
    }
    return out;
}

double worst_error(const std::vector<GradSuiteEntry>& entries) {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
}

}  // namespace cdx
