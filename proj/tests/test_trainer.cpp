#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cdx/config.hpp"
#include "cdx/trainer.hpp"
#include "test_util.hpp"

using namespace cdx;
using namespace cdx::testing;

namespace {

std::vector<BiTemporalSample> eight_pairs() {
    SynthConfig s;
    s.seed = 4;
    return synth_generate(s, 8);
}

std::string bytes_of(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

struct Run {
    std::vector<EpochLog> logs;
    std::string checkpoint;
    EvalResult eval;
};

Run run_once(const std::vector<BiTemporalSample>& data, std::size_t epochs, const std::filesystem::path& ckpt,
             std::uint64_t shuffle_seed = 0) {
    Rng rng(0);
    ParamStore store;
    ChangeDetector model({}, store, rng);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = shuffle_seed;
    Run r;
    r.logs = train(model, store, data, cfg);
    save_checkpoint(store, ckpt);
    r.checkpoint = bytes_of(ckpt);
    r.eval = evaluate(model, data);
    return r;
}

}  // namespace

TEST_CASE("stack_samples") {
    const auto data = eight_pairs();
    const auto t = stack_samples(data, {3, 1}, 2);
    CHECK(t.shape() == Shape{2, 1, 64, 64});
    CHECK(std::equal(data[3].mask.data().begin(), data[3].mask.data().end(), t.data().begin()));
    CHECK(std::equal(data[1].mask.data().begin(), data[1].mask.data().end(), t.data().begin() + 4096));
    CHECK_THROWS(stack_samples(data, {}, 0));
}

TEST_CASE("two epochs: two log rows, a checkpoint, reproducible bytes") {
    TempDir tmp("trainer");
    const auto data = eight_pairs();
    int seen = 0;
    {
        Rng rng(0);
        ParamStore store;
        ChangeDetector model({}, store, rng);
        TrainConfig cfg;
        cfg.epochs = 2;
        const auto logs = train(model, store, data, cfg, [&](const EpochLog&) { ++seen; });
        REQUIRE(logs.size() == 2);
        CHECK(seen == 2);
        CHECK(logs[0].epoch == 1);
        CHECK(logs[1].epoch == 2);
        for (const auto& row : logs) {
            CHECK(std::isfinite(row.loss));
            CHECK(row.counts.total() == 8u * 64u * 64u);
        }
    }
    const auto a = run_once(data, 2, tmp.path / "a.bin");
    const auto b = run_once(data, 2, tmp.path / "b.bin");
    CHECK(std::filesystem::exists(tmp.path / "a.bin"));
    CHECK(a.checkpoint == b.checkpoint);
    CHECK(a.eval.counts == b.eval.counts);
    CHECK(a.eval.loss == b.eval.loss);
    for (std::size_t e = 0; e < 2; ++e) {
        CHECK(a.logs[e].loss == b.logs[e].loss);
        CHECK(a.logs[e].counts == b.logs[e].counts);
    }
    const auto c = run_once(data, 2, tmp.path / "c.bin", 9);
    CHECK(c.checkpoint != a.checkpoint);
}

TEST_CASE("a reloaded checkpoint evaluates identically") {
    TempDir tmp("reload");
    const auto data = eight_pairs();
    const auto a = run_once(data, 1, tmp.path / "a.bin");
    Rng rng(77);
    ParamStore store;
    ChangeDetector model({}, store, rng);
    load_checkpoint(store, tmp.path / "a.bin");
    const auto ev = evaluate(model, data);
    CHECK(ev.counts == a.eval.counts);
    CHECK(ev.loss == a.eval.loss);

    ParamStore other;
    ModelConfig narrow;
    narrow.channels = {16, 32, 64, 96};
    ChangeDetector m2(narrow, other, rng);
    try {
        load_checkpoint(other, tmp.path / "a.bin");
        FAIL("incompatible checkpoint accepted");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("backbone.stage3") != std::string::npos);
    }
}

TEST_CASE("evaluation is independent of the batch split") {
    const auto data = eight_pairs();
    Rng rng(3);
    ParamStore store;
    ChangeDetector model({}, store, rng);
    const auto whole = evaluate(model, data, {}, 8);
    const auto ones = evaluate(model, data, {}, 1);
    const auto threes = evaluate(model, data, {}, 3);
    CHECK(whole.counts == ones.counts);
    CHECK(whole.counts == threes.counts);
    // Dice pools over a batch, so only the counts are split-invariant.
    CHECK(whole.loss != ones.loss);
}

TEST_CASE("pair directory source") {
    TempDir tmp("pairs");
    const auto data = eight_pairs();
    save_pair_dir(data, tmp.path);
    DataConfig dc;
    dc.source = DataConfig::Source::Dir;
    dc.dir = tmp.path;
    const auto back = load_dataset(dc);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].id == data[i].id);
        CHECK(std::ranges::equal(back[i].mask.data(), data[i].mask.data()));
    }
}

TEST_CASE("training rejects empty input") {
    Rng rng(0);
    ParamStore store;
    ChangeDetector model({}, store, rng);
    CHECK_THROWS_AS(train(model, store, {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate(model, {}), std::invalid_argument);
}
