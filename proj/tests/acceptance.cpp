// Acceptance run: one [PASS]/[FAIL] line per criterion, exit status 1 if
// any criterion fails. Tolerances are fixed here, not tuned per run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include "cdx/gradsuite.hpp"
#include "cdx/model.hpp"
#include "cdx/ops.hpp"
#include "cdx/trainer.hpp"
#include "cdx/xlstm.hpp"
#include "test_util.hpp"

using namespace cdx;
using namespace cdx::testing;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// max |a - b| / max |b|
double norm_rel(std::span<const double> a, std::span<const double> b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return den > 0.0 ? num / den : num;
}

void gradient_suite() {
    GradSuiteOptions o;
    o.seeds = 5;
    o.model_coords = 4;
    const auto t0 = Clock::now();
    const auto rows = run_grad_suite(o);
    const double dt = seconds_since(t0);
    std::string worst_name;
    for (const auto& r : rows)
        if (r.max_rel_error == worst_error(rows)) worst_name = r.name;
    std::size_t model_coords = 0;
    for (const auto& r : rows)
        if (r.name.rfind("model", 0) == 0) model_coords = r.coords;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu checks, worst %.2e (%s), model 1x3x32x32 %zu coords, %.0f s (limits 1e-4, 300 s)",
                  rows.size(), worst_error(rows), worst_name.c_str(), model_coords, dt);
    report(worst_error(rows) < 1e-4 && dt < 300.0 && model_coords > 0, "gradient suite", buf);
}

void oracle_equivalence() {
    Rng rng(2024);
    const int cases = 20;
    double conv = 0, causal = 0, bil = 0, pool = 0, step = 0;
    for (int c = 0; c < cases; ++c) {
        // conv2d, varying stride / padding / groups
        const std::size_t groups = (c % 3 == 0) ? 3 : 1, stride = 1 + c % 2, pad = c % 2;
        const Shape xs{2, 3, 5 + static_cast<std::size_t>(c % 3), 5}, ws{6, 3 / groups, 3, 3};
        auto x = random_tensor(xs, rng), w = random_tensor(ws, rng), b = random_tensor({6}, rng);
        const auto got = conv2d(x, w, b, stride, pad, groups);
        const auto bv = vec(b);
        conv = std::max(conv, norm_rel(got.data(), conv2d_oracle(vec(x), xs, vec(w), ws, &bv, stride, pad, groups)));

        const std::size_t L = 3 + c, C = 4;
        auto seq = random_tensor({2, L, C}, rng), ker = random_tensor({C, 4}, rng);
        const auto cc = causal_conv1d(seq, ker, Tensor());
        causal = std::max(causal, norm_rel(cc.data(), causal_conv_oracle(vec(seq), 2, L, C, vec(ker), 4)));

        const long H = 2 + c % 4, W = 3 + c % 3, f = 2 + c % 3;
        auto img = random_tensor({1, 1, static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, rng);
        const auto up = bilinear_upsample(img, static_cast<std::size_t>(f));
        std::vector<double> ref;
        for (long oy = 0; oy < H * f; ++oy)
            for (long ox = 0; ox < W * f; ++ox) ref.push_back(bilinear_pixel_oracle(vec(img), H, W, f, oy, ox));
        bil = std::max(bil, norm_rel(up.data(), ref));

        auto m = random_tensor({2, 3, static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, rng);
        const auto mv = vec(m);
        const auto ph = axial_avgpool(m, Axis::Height), pw = axial_avgpool(m, Axis::Width);
        std::vector<double> rh, rw;
        for (long p = 0; p < 6; ++p) {
            for (long xx = 0; xx < W; ++xx) {
                double s = 0;
                for (long yy = 0; yy < H; ++yy) s += mv[(p * H + yy) * W + xx];
                rh.push_back(s / static_cast<double>(H));
            }
            for (long yy = 0; yy < H; ++yy) {
                double s = 0;
                for (long xx = 0; xx < W; ++xx) s += mv[(p * H + yy) * W + xx];
                rw.push_back(s / static_cast<double>(W));
            }
        }
        pool = std::max({pool, norm_rel(ph.data(), rh), norm_rel(pw.data(), rw)});

        // Stabilized step vs the unstabilized exp-gate recurrence, 16 steps.
        auto st = xlstm::MLSTMState::zeros(1, 4, 4);
        NaiveMLSTM naive(4, 4);
        for (int t = 0; t < 16; ++t) {
            std::vector<double> q(4), k(4), v(4), og(4);
            for (auto* vv : {&q, &k, &v, &og})
                for (auto& e : *vv) e = rng.uniform(-1, 1);
            std::vector<double> ig{rng.uniform(-2, 2)}, fg{rng.uniform(-2, 2)};
            const auto h = xlstm::mlstm_step(st, q, k, v, ig, fg, og);
            const auto r = naive.step(q.data(), k.data(), v.data(), ig[0], fg[0], og.data());
            step = std::max(step, norm_rel(h, r));
        }
    }
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%d cases each; conv2d %.1e, causal_conv1d %.1e, bilinear %.1e, axial_avgpool %.1e, mlstm_step %.1e "
                  "(limit 1e-10)",
                  cases, conv, causal, bil, pool, step);
    report(std::max({conv, causal, bil, pool, step}) < 1e-10, "oracle equivalence", buf);
}

void reversal_equivariance() {
    Rng rng(31);
    double worst = 0.0;
    for (int s = 0; s < 50; ++s) {
        ParamStore store;
        xlstm::BiMLSTM phi(store, "phi", 8, 4, rng);
        randomize(store, rng);
        const std::size_t L = 2 + static_cast<std::size_t>(rng.uniform_int(0, 30));
        auto x = random_tensor({1 + static_cast<std::size_t>(s % 2), L, 8}, rng);
        const auto lhs = phi.forward(reverse_seq(x)), rhs = reverse_seq(phi.forward(x));
        worst = std::max(worst, max_abs_diff(lhs.data(), rhs.data()));
    }
    report(worst < 1e-12, "Bi-mLSTM reversal equivariance", fmt("50 sequences, max |diff| %.2e (limit 1e-12)", worst));
}

void causality() {
    Rng rng(41);
    int bad = 0, unchanged_at_t = 0;
    for (int s = 0; s < 20; ++s) {
        const std::size_t L = 4 + static_cast<std::size_t>(rng.uniform_int(0, 28)), D = 8, heads = 2;
        const auto t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(L) - 1));
        // Bare scan.
        std::vector<Tensor> in;
        for (int i = 0; i < 6; ++i) in.push_back(random_tensor({1, L, i == 3 || i == 4 ? heads : D}, rng, -2, 2));
        const auto y0 = xlstm::mlstm_scan(in[0], in[1], in[2], in[3], in[4], in[5], heads);
        std::vector<Tensor> pin;
        for (auto& a : in) {
            auto c = a.clone();
            const std::size_t w = a.dim(2);
            for (std::size_t j = 0; j < w; ++j) c.data_mut()[t * w + j] += rng.uniform(-1, 1);
            pin.push_back(c);
        }
        const auto y1 = xlstm::mlstm_scan(pin[0], pin[1], pin[2], pin[3], pin[4], pin[5], heads);
        for (std::size_t i = 0; i < t * D; ++i) bad += y0.data()[i] != y1.data()[i];
        bool moved = false;
        for (std::size_t j = 0; j < D; ++j) moved = moved || y0.data()[t * D + j] != y1.data()[t * D + j];
        unchanged_at_t += !moved;

        // Full block (causal conv, projections, gates).
        ParamStore store;
        xlstm::MLSTMBlock block(store, "blk", D, 4, rng);
        randomize(store, rng);
        auto x = random_tensor({1, L, D}, rng);
        auto xp = x.clone();
        for (std::size_t j = 0; j < D; ++j) xp.data_mut()[t * D + j] += rng.uniform(-1, 1);
        const auto b0 = block.forward(x), b1 = block.forward(xp);
        for (std::size_t i = 0; i < t * D; ++i) bad += b0.data()[i] != b1.data()[i];
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "20 (t, sequence) cases on mlstm_scan and MLSTMBlock, %d prefix entries changed, %d cases "
                  "left position t unchanged", bad, unchanged_at_t);
    report(bad == 0 && unchanged_at_t == 0, "causality", buf);
}

void stability() {
    Rng rng(51);
    const std::size_t L = 4096, heads = 4, D = 32;
    auto q = random_tensor({1, L, D}, rng, -1, 1, true), k = random_tensor({1, L, D}, rng, -1, 1, true);
    auto v = random_tensor({1, L, D}, rng, -1, 1, true), og = random_tensor({1, L, D}, rng, -1, 1, true);
    auto ig = random_tensor({1, L, heads}, rng, -50, 50, true), fg = random_tensor({1, L, heads}, rng, -50, 50, true);
    const auto h = xlstm::mlstm_scan(q, k, v, ig, fg, og, heads);
    backward(sum(h));
    bool ok = all_finite(h.data());
    for (const auto& t : {q, k, v, ig, fg, og}) ok = ok && all_finite(t.grad());

    auto st = xlstm::MLSTMState::zeros(heads, 8, 8);
    for (std::size_t t = 0; t < L && ok; ++t) {
        std::vector<double> qq(D), kk(D), vv(D), oo(D), ii(heads), ff(heads);
        for (auto* a : {&qq, &kk, &vv, &oo})
            for (auto& e : *a) e = rng.uniform(-1, 1);
        for (auto& e : ii) e = rng.uniform(-50, 50);
        for (auto& e : ff) e = rng.uniform(-50, 50);
        ok = all_finite(xlstm::mlstm_step(st, qq, kk, vv, ii, ff, oo));
    }
    ok = ok && all_finite(st.C) && all_finite(st.n) && all_finite(st.m);
    report(ok, "stability", "4096-step scan and step loop, gates in [-50, 50]: outputs, state and gradients finite");
}

void architecture_contract() {
    Rng rng(61);
    ParamStore store;
    ChangeDetector model({}, store, rng);
    auto a = random_tensor({1, 3, 256, 256}, rng, 0, 1), b = random_tensor({1, 3, 256, 256}, rng, 0, 1);
    NoGradGuard ng;
    const auto tr = model.trace(a, b);
    const std::size_t sides[4] = {64, 32, 16, 8};
    bool ok = true;
    std::string got;
    for (std::size_t s = 0; s < 4; ++s) {
        const Shape want{1, model.config().channels[s], sides[s], sides[s]};
        ok = ok && tr.pyr1.stages[s].shape() == want && tr.pyr2.stages[s].shape() == want &&
             tr.reps[s].shape() == want;
        got += shape_str(tr.pyr1.stages[s].shape()) + " ";
    }
    ok = ok && tr.logits.shape() == Shape{1, 1, 256, 256} && all_finite(tr.logits.data());
    report(ok, "architecture contract", "256x256 -> stages " + got + "(1/4 1/8 1/16 1/32), logits " +
                                            shape_str(tr.logits.shape()));
}

void loss_contract() {
    Rng rng(71);
    double sat = 0.0, ln2_err = 0.0, decomp = 0.0;
    for (int c = 0; c < 10; ++c) {
        const std::size_t n = 1 + c % 3, s = 8 + 8 * static_cast<std::size_t>(c % 4);
        std::vector<double> y(n * s * s), zp(y.size()), z0(y.size(), 0.0), zr(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
            zp[i] = y[i] > 0.5 ? 60.0 : -60.0;
            zr[i] = rng.uniform(-4, 4);
        }
        const Shape sh{n, 1, s, s};
        const auto Y = Tensor::from(sh, y);
        sat = std::max(sat, total_loss(Tensor::from(sh, zp), Y).item());
        ln2_err = std::max(ln2_err, std::abs(bce_loss(Tensor::from(sh, z0), Y).item() - std::numbers::ln2));
        const auto Z = Tensor::from(sh, zr);
        const double bce = bce_loss(Z, Y).item(), dice = dice_loss(Z, Y).item();
        decomp = std::max({decomp, std::abs(total_loss(Z, Y, {1, 0}).item() - bce),
                           std::abs(total_loss(Z, Y, {0, 1}).item() - dice),
                           std::abs(total_loss(Z, Y, {1, 1}).item() - (bce + dice))});
    }
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "saturated-perfect total %.1e (limit 1e-10), |BCE(0) - ln2| %.1e (limit 1e-12), "
                  "(1,0)/(0,1)/(1,1) decomposition %.1e",
                  sat, ln2_err, decomp);
    report(sat < 1e-10 && ln2_err <= 1e-12 && decomp < 1e-12, "loss contract", buf);
}

void metric_identity() {
    Rng rng(81);
    double worst = 0.0;
    int rational_bad = 0;
    for (int i = 0; i < 1000; ++i) {
        ConfusionCounts c;
        c.tp = static_cast<std::uint64_t>(rng.uniform_int(0, 100000));
        c.fp = static_cast<std::uint64_t>(rng.uniform_int(0, 100000));
        c.fn = static_cast<std::uint64_t>(rng.uniform_int(0, 100000));
        c.tn = static_cast<std::uint64_t>(rng.uniform_int(0, 100000));
        if (i % 50 == 0) c.tp = 0;
        const auto m = metrics(c);
        worst = std::max(worst, std::abs(m.f1 - 2 * m.iou / (1 + m.iou)));
        // Rationals: F1 = 2tp/(2tp+fp+fn), IoU = tp/(tp+fp+fn). With
        // a = tp, u = tp+fp+fn, 2IoU/(1+IoU) = 2a/(u+a); cross-multiply.
        const unsigned __int128 a = c.tp, u = c.tp + c.fp + c.fn;
        if (u != 0 && 2 * a * (2 * a + c.fp + c.fn) != 2 * a * (u + a)) ++rational_bad;
        // The float F1 must be the correctly rounded rational value.
        if (u != 0 && m.f1 != static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn)) ++rational_bad;
    }
    ConfusionCounts hand{6, 2, 2, 90};
    const auto h = metrics(hand);
    const double hd = std::max({std::abs(h.f1 - 0.75), std::abs(h.precision - 0.75), std::abs(h.recall - 0.75),
                                std::abs(h.iou - 0.60), std::abs(h.oa - 0.96)});
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "1000 tuples, float gap %.1e (limit 1e-12), %d rational mismatches; hand case "
                  "(%.4f, %.4f, %.4f, %.4f, %.4f) off by %.1e",
                  worst, rational_bad, h.f1, h.precision, h.recall, h.iou, h.oa, hd);
    report(worst < 1e-12 && rational_bad == 0 && hd < 1e-12, "metric identity", buf);
}

std::vector<BiTemporalSample> eight_pairs() { return synth_generate(SynthConfig{}, 8); }

void learning_check() {
    const auto data = eight_pairs();
    std::string detail;
    bool ok = true;
    {
        const auto t0 = Clock::now();
        Rng rng(0);
        ParamStore store;
        ChangeDetector model({}, store, rng);
        TrainConfig cfg;  // 200 epochs, batch 2, Adam 1e-3
        std::size_t first = 0;
        train(model, store, data, cfg, [&](const EpochLog& r) {
            if (!first && r.metrics.f1 >= 0.95) first = r.epoch;
        });
        const auto ev = evaluate(model, data);
        const double dt = seconds_since(t0);
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "SSGG on 8 synthetic 64x64 pairs: train-set F1 %.4f after %zu epochs, first >= 0.95 at epoch %zu, "
                      "%.0f s (limits 0.95, 600 s)",
                      ev.metrics.f1, cfg.epochs, first, dt);
        detail = buf;
        ok = ev.metrics.f1 >= 0.95 && first > 0 && dt < 600.0;
    }
    for (const char* a : {"GGGG", "SSSS"}) {
        Rng rng(0);
        ParamStore store;
        ModelConfig mc;
        mc.assignment = EnhancerAssignment::parse(a);
        ChangeDetector model(mc, store, rng);
        TrainConfig cfg;
        cfg.epochs = 50;
        const auto logs = train(model, store, data, cfg);
        bool finite = true;
        for (const auto& r : logs) finite = finite && std::isfinite(r.loss);
        auto window = [&](std::size_t from) {
            double s = 0;
            for (std::size_t e = from; e < from + 5; ++e) s += logs[e].loss;
            return s / 5;
        };
        const double head = window(0), tail = window(45);
        char buf[160];
        std::snprintf(buf, sizeof buf, "; %s loss over 50 epochs %.4f -> %.4f (5-epoch means %.4f -> %.4f)", a,
                      logs.front().loss, logs.back().loss, head, tail);
        detail += buf;
        ok = ok && finite && tail < head && logs.back().loss < logs.front().loss;
    }
    report(ok, "learning check", detail);
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void determinism() {
    TempDir tmp("acceptance");
    const auto data = eight_pairs();
    auto run = [&](const std::string& tag) {
        Rng rng(0);
        ParamStore store;
        ChangeDetector model({}, store, rng);
        TrainConfig cfg;
        cfg.epochs = 5;
        std::string table;
        train(model, store, data, cfg, [&](const EpochLog& r) {
            char line[160];
            std::snprintf(line, sizeof line, "%zu %.17g %.17g %llu %llu %llu %llu\n", r.epoch, r.loss, r.metrics.f1,
                          (unsigned long long)r.counts.tp, (unsigned long long)r.counts.fp,
                          (unsigned long long)r.counts.fn, (unsigned long long)r.counts.tn);
            table += line;
        });
        const auto ev = evaluate(model, data);
        char line[200];
        std::snprintf(line, sizeof line, "eval %.17g %.17g %.17g %.17g %.17g %.17g\n", ev.loss, ev.metrics.f1,
                      ev.metrics.precision, ev.metrics.recall, ev.metrics.iou, ev.metrics.oa);
        table += line;
        save_checkpoint(store, tmp.path / (tag + ".bin"));
        return std::make_pair(file_bytes(tmp.path / (tag + ".bin")), table);
    };
    const auto a = run("a"), b = run("b");
    const bool ok = !a.first.empty() && a.first == b.first && a.second == b.second;
    report(ok, "determinism", "two 5-epoch runs, same config and seed: checkpoints (" + std::to_string(a.first.size()) +
                                  " bytes) and metric tables " + (ok ? "bit-identical" : "differ"));
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    gradient_suite();
    oracle_equivalence();
    reversal_equivariance();
    causality();
    stability();
    architecture_contract();
    loss_contract();
    metric_identity();
    learning_check();
    determinism();
    std::printf("%d criteria failed, %.0f s total\n", failures, seconds_since(t0));
    return failures ? 1 : 0;
}
