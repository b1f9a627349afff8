#include <doctest.h>

#include <cmath>
#include <optional>
#include <stdexcept>

#include "cdx/gradcheck.hpp"
#include "cdx/ops.hpp"
#include "cdx/xlstm.hpp"
#include "test_util.hpp"

using namespace cdx;
using namespace cdx::testing;
using namespace cdx::xlstm;

namespace {

// y[j] = sum_i x[i] W[i, j] (+ b[j])
std::vector<double> matvec(const std::vector<double>& x, const Tensor& W, const Tensor* b = nullptr) {
    const std::size_t in = W.dim(0), out = W.dim(1);
    std::vector<double> y(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
        double acc = b ? b->data()[j] : 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += x[i] * W.data()[i * out + j];
        y[j] = acc;
    }
    return y;
}

std::vector<double> headwise(const std::vector<double>& x, const Tensor& W) {
    const std::size_t H = W.dim(0), d = W.dim(1);
    std::vector<double> y(H * d, 0.0);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t i = 0; i < d; ++i) y[h * d + j] += x[h * d + i] * W.data()[(h * d + i) * d + j];
    return y;
}

double silu1(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("raster flatten layout and round trip") {
    auto x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    auto s = raster_flatten(x);
    CHECK(s.shape() == Shape{1, 4, 1});
    CHECK(vec(s) == std::vector<double>{1, 2, 3, 4});

    Rng rng(1);
    auto r = random_tensor({2, 3, 4, 5}, rng);
    auto back = raster_unflatten(raster_flatten(r), 4, 5);
    CHECK(max_abs_diff(back.data(), r.data()) == 0.0);
    CHECK_THROWS_AS(raster_unflatten(raster_flatten(r), 5, 5), ShapeError);

    auto xt = Tensor::from({1, 1, 2, 2}, {1, 3, 2, 4});
    CHECK(vec(raster_flatten(xt)) != vec(s));
}

TEST_CASE("causal_conv1d") {
    Rng rng(2);
    auto seq = random_tensor({2, 9, 3}, rng);
    std::vector<double> delta(3 * 4, 0.0);
    for (int c = 0; c < 3; ++c) delta[c * 4 + 3] = 1.0;
    auto id = causal_conv1d(seq, Tensor::from({3, 4}, delta), Tensor());
    CHECK(max_abs_diff(id.data(), seq.data()) == 0.0);

    auto k = random_tensor({3, 4}, rng);
    auto y = causal_conv1d(seq, k, Tensor());
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(y.data()[c] == doctest::Approx(k.data()[c * 4 + 3] * seq.data()[c]).epsilon(1e-15));

    auto ref = causal_conv_oracle(vec(seq), 2, 9, 3, vec(k), 4);
    CHECK(max_rel_diff(y.data(), ref) < 1e-12);
}

TEST_CASE("mlstm_step: output gate shutoff") {
    auto st = MLSTMState::zeros(1, 2, 2);
    std::vector<double> q{0.3, -1.2}, k{0.7, 0.4}, v{1.5, -0.6}, i{0.2}, f{-0.1}, o{-40, -40};
    auto h = mlstm_step(st, q, k, v, i, f, o);
    for (double x : h) CHECK(std::abs(x) < 1e-15);
}

TEST_CASE("mlstm_step: single step hand computation with d_k = 2") {
    // Fresh state, i~ = 0, f~ = -40: C = v k^T, n = k, m = 0.
    std::vector<double> k{0.5, 1.5}, v{2.0, -3.0}, i{0.0}, f{-40.0}, o{40.0, 40.0};
    const double gate = 1.0 / (1.0 + std::exp(-40.0));
    {
        auto st = MLSTMState::zeros(1, 2, 2);
        std::vector<double> q{1.0, 0.2};  // k.q = 0.8 -> denominator 1
        auto h = mlstm_step(st, q, k, v, i, f, o);
        CHECK(h[0] == doctest::Approx(0.8 * 2.0 * gate).epsilon(1e-15));
        CHECK(h[1] == doctest::Approx(0.8 * -3.0 * gate).epsilon(1e-15));
        CHECK(st.m[0] == 0.0);
    }
    {
        auto st = MLSTMState::zeros(1, 2, 2);
        std::vector<double> q{2.0, 1.0};  // k.q = 2.5 -> normalized to v
        auto h = mlstm_step(st, q, k, v, i, f, o);
        CHECK(h[0] == doctest::Approx(2.0 * gate).epsilon(1e-15));
        CHECK(h[1] == doctest::Approx(-3.0 * gate).epsilon(1e-15));
    }
}

TEST_CASE("mlstm_step: two steps match the unstabilized recurrence") {
    auto st = MLSTMState::zeros(1, 2, 3);
    NaiveMLSTM naive(2, 3);
    std::vector<double> q1{0.4, -0.9}, k1{1.1, 0.3}, v1{0.5, -1.0, 2.0};
    std::vector<double> q2{-0.2, 0.6}, k2{-0.7, 0.8}, v2{1.5, 0.1, -0.4};
    std::vector<double> zero{0.0}, o{0.3, -0.2, 1.0};
    auto h1 = mlstm_step(st, q1, k1, v1, zero, zero, o);
    auto r1 = naive.step(q1.data(), k1.data(), v1.data(), 0.0, 0.0, o.data());
    auto h2 = mlstm_step(st, q2, k2, v2, zero, zero, o);
    auto r2 = naive.step(q2.data(), k2.data(), v2.data(), 0.0, 0.0, o.data());
    CHECK(max_rel_diff(h1, r1) < 1e-14);
    CHECK(max_rel_diff(h2, r2) < 1e-14);
    // Stored memory is the raw memory scaled by exp(-m).
    const double s = std::exp(-st.m[0]);
    for (std::size_t a = 0; a < 6; ++a) CHECK(st.C[a] == doctest::Approx(naive.C[a] * s).epsilon(1e-14));
}

TEST_CASE("mlstm_step: stabilizer agrees with naive recurrence over 16 steps") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        auto st = MLSTMState::zeros(1, 4, 4);
        NaiveMLSTM naive(4, 4);
        double worst = 0.0;
        for (int t = 0; t < 16; ++t) {
            std::vector<double> q(4), k(4), v(4), o(4);
            for (auto* vv : {&q, &k, &v, &o})
                for (auto& x : *vv) x = rng.uniform(-1, 1);
            std::vector<double> ig{rng.uniform(-2, 2)}, fg{rng.uniform(-2, 2)};
            auto h = mlstm_step(st, q, k, v, ig, fg, o);
            auto r = naive.step(q.data(), k.data(), v.data(), ig[0], fg[0], o.data());
            double num = 0.0, den = 0.0;
            for (int a = 0; a < 4; ++a) {
                num += (h[a] - r[a]) * (h[a] - r[a]);
                den += r[a] * r[a];
            }
            worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
        }
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("mlstm_step: long scans with extreme gates stay finite") {
    Rng rng(6);
    auto st = MLSTMState::zeros(4, 8, 8);
    for (int t = 0; t < 4096; ++t) {
        std::vector<double> q(32), k(32), v(32), o(32), ig(4), fg(4);
        for (auto* vv : {&q, &k, &v, &o})
            for (auto& x : *vv) x = rng.uniform(-1, 1);
        for (auto& x : ig) x = rng.uniform(-50, 50);
        for (auto& x : fg) x = rng.uniform(-50, 50);
        auto h = mlstm_step(st, q, k, v, ig, fg, o);
        REQUIRE(all_finite(h));
    }
    CHECK(all_finite(st.C));
    CHECK(all_finite(st.n));
}

TEST_CASE("mlstm_scan gradient check") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(40 + seed);
        auto q = random_tensor({2, 6, 8}, rng, -1, 1, true);
        auto k = random_tensor({2, 6, 8}, rng, -1, 1, true);
        auto v = random_tensor({2, 6, 8}, rng, -1, 1, true);
        auto ig = random_tensor({2, 6, 2}, rng, -2, 2, true);
        auto fg = random_tensor({2, 6, 2}, rng, -2, 2, true);
        auto og = random_tensor({2, 6, 8}, rng, -1, 1, true);
        auto w = probe_weights(2 * 6 * 8, seed);
        auto f = [&] { return sum(mul(mlstm_scan(q, k, v, ig, fg, og, 2), Tensor::from({2, 6, 8}, w))); };
        auto rep = grad_check(f, {q, k, v, ig, fg, og});
        INFO(rep.worst);
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("mlstm block: residual identity, shape and single position composition") {
    Rng rng(7);
    ParamStore store;
    MLSTMBlock block(store, "blk", 8, 4, rng);
    CHECK(block.params().inner == 16);
    auto x = random_tensor({2, 12, 8}, rng);
    CHECK(block.forward(x).shape() == x.shape());
    CHECK_THROWS_AS(block.forward(random_tensor({2, 12, 6}, rng)), ShapeError);

    zero_all(store);
    CHECK(max_abs_diff(block.forward(x).data(), x.data()) == 0.0);

    randomize(store, rng);
    auto x1 = random_tensor({1, 1, 8}, rng);
    auto out = block.forward(x1);

    const auto& p = block.params();
    auto xv = vec(x1);
    double mu = 0, var = 0;
    for (double a : xv) mu += a / 8;
    for (double a : xv) var += (a - mu) * (a - mu) / 8;
    std::vector<double> u(8);
    for (int c = 0; c < 8; ++c)
        u[c] = (xv[c] - mu) / std::sqrt(var + 1e-5) * p.norm_scale.data()[c] + p.norm_shift.data()[c];
    auto a = matvec(u, p.up_x), z = matvec(u, p.up_z);
    std::vector<double> c(16);
    for (int j = 0; j < 16; ++j) c[j] = silu1(p.conv_kernel.data()[j * 4 + 3] * a[j] + p.conv_bias.data()[j]);
    auto q = headwise(c, p.proj_q), k = headwise(c, p.proj_k), v = headwise(a, p.proj_v);
    for (auto& kk : k) kk /= 2.0;  // 1/sqrt(d_k) with d_k = 4
    std::vector<double> qkv = q;
    qkv.insert(qkv.end(), k.begin(), k.end());
    qkv.insert(qkv.end(), v.begin(), v.end());
    auto ig = matvec(qkv, p.igate_w, &p.igate_b), fg = matvec(qkv, p.fgate_w, &p.fgate_b);
    auto og = matvec(a, p.ogate_w, &p.ogate_b);
    auto st = MLSTMState::zeros(4, 4, 4);
    auto h = mlstm_step(st, q, k, v, ig, fg, og);
    std::vector<double> y(16);
    for (int j = 0; j < 16; ++j) y[j] = (h[j] + p.skip.data()[j] * c[j]) * silu1(z[j]);
    auto down = matvec(y, p.down, &p.down_b);
    for (int j = 0; j < 8; ++j) CHECK(out.data()[j] == doctest::Approx(xv[j] + down[j]).epsilon(1e-12));
}

TEST_CASE("mlstm block: causality") {
    Rng rng(8);
    ParamStore store;
    MLSTMBlock block(store, "blk", 8, 4, rng);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_tensor({1, 10, 8}, rng);
        auto y0 = block.forward(x);
        const auto t = static_cast<std::size_t>(rng.uniform_int(0, 9));
        auto xp = x.clone();
        for (std::size_t c = 0; c < 8; ++c) xp.data_mut()[t * 8 + c] += rng.uniform(-1, 1);
        auto y1 = block.forward(xp);
        for (std::size_t i = 0; i < t * 8; ++i) CHECK(y0.data()[i] == y1.data()[i]);
        bool changed = false;
        for (std::size_t c = 0; c < 8; ++c) changed = changed || y0.data()[t * 8 + c] != y1.data()[t * 8 + c];
        CHECK(changed);
    }
}

TEST_CASE("bi_mlstm: reversal equivariance, single position and double residual") {
    Rng rng(9);
    ParamStore store;
    BiMLSTM phi(store, "phi", 8, 4, rng);
    randomize(store, rng);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor({2, 7, 8}, rng);
        auto lhs = phi.forward(reverse_seq(x));
        auto rhs = reverse_seq(phi.forward(x));
        CHECK(max_abs_diff(lhs.data(), rhs.data()) <= 1e-12);
    }
    auto x1 = random_tensor({1, 1, 8}, rng);
    auto b1 = phi.block().forward(x1);
    auto p1 = phi.forward(x1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(p1.data()[i] == doctest::Approx(2 * b1.data()[i]).epsilon(1e-15));

    zero_all(store);
    auto x = random_tensor({1, 5, 8}, rng);
    auto y = phi.forward(x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == 2 * x.data()[i]);
}

TEST_CASE("bi_mlstm gradient check") {
    // Input-gate biases are structurally near zero here; the worst
    // coordinates sit around 1e-8.
    GradCheckOptions opts;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(10 + seed);
        ParamStore store;
        BiMLSTM phi(store, "phi", 8, 4, rng);
        auto x = random_tensor({1, 6, 8}, rng, -0.5, 0.5, true);
        auto w = probe_weights(x.numel(), seed);
        auto f = [&] { return sum(mul(phi.forward(x), Tensor::from(x.shape(), w))); };
        std::vector<Tensor> inputs{x};
        for (const auto& p : store.params()) inputs.push_back(p.value);
        auto rep = grad_check(f, inputs, opts);
        INFO("seed " << seed << " " << rep.worst);
        CHECK(rep.max_rel_error < 1e-4);
    }
}

TEST_CASE("pinned normalizer branches replay the recorded piece") {
    Rng rng(5);
    ParamStore store;
    BiMLSTM phi(store, "phi", 4, 4, rng);
    auto x = random_tensor({1, 32, 4}, rng, -0.5, 0.5);
    const auto free_out = vec(phi.forward(x));

    PinNormalizerBranches pin;
    pin.begin();
    CHECK(pin.mode() == PinNormalizerBranches::Mode::Record);
    const auto rec_out = vec(phi.forward(x));
    // Two directions, 32 positions, 4 heads.
    CHECK(pin.recorded() == 2 * 32 * 4);
    CHECK(pin.floor_count() <= pin.recorded());
    pin.begin();
    CHECK(pin.mode() == PinNormalizerBranches::Mode::Replay);
    const auto rep_out = vec(phi.forward(x));
    for (std::size_t i = 0; i < free_out.size(); ++i) {
        CHECK(rec_out[i] == free_out[i]);
        CHECK(rep_out[i] == free_out[i]);
    }

    // A longer sequence outruns the tape.
    auto longer = random_tensor({1, 40, 4}, rng, -0.5, 0.5);
    pin.begin();
    CHECK_THROWS_AS(phi.forward(longer), std::logic_error);
    CHECK_THROWS_AS(PinNormalizerBranches{}, std::logic_error);
}

TEST_CASE("pinned branches leave gradients unchanged") {
    Rng rng(6);
    ParamStore store;
    BiMLSTM phi(store, "phi", 4, 4, rng);
    auto x = random_tensor({1, 16, 4}, rng, -0.5, 0.5, true);
    auto grads = [&](bool pinned) {
        std::optional<PinNormalizerBranches> pin;
        if (pinned) {
            pin.emplace();
            pin->begin();
        }
        x.zero_grad();
        backward(weighted_sum(phi.forward(x), 1));
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    const auto a = grads(false);
    const auto b = grads(true);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
