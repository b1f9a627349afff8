#include <doctest.h>

#include <string>

#include "cdx/config.hpp"

using namespace cdx;

namespace {

std::string what_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("empty text gives the defaults") {
    const auto c = parse_config("# nothing\n\n");
    CHECK(c.model.channels == StageChannels{16, 32, 64, 128});
    CHECK(c.model.assignment.str() == "SSGG");
    CHECK(c.train.epochs == 200);
    CHECK(c.train.batch == 2);
    CHECK(c.train.adam.lr == 1e-3);
    CHECK(c.data.source == DataConfig::Source::Synth);
    CHECK(c.data.count == 8);
    CHECK(c.data.synth.size == 64);
    CHECK_NOTHROW(validate(c));
}

TEST_CASE("sections, keys, comments and whitespace") {
    const auto c = parse_config(R"(
[model]
  channels = 8, 16, 24, 32   # narrower
assignment=GSGS
phi_heads = 2
[train]
epochs = 7
lr = 2.5e-4
loss_ce = 0.5
seed = 42
[data]
changes = 2,3
size = 96
[output]
dir = runs/x
)");
    CHECK(c.model.channels == StageChannels{8, 16, 24, 32});
    CHECK(c.model.assignment.str() == "GSGS");
    CHECK(c.model.phi_heads == 2);
    CHECK(c.train.epochs == 7);
    CHECK(c.train.adam.lr == 2.5e-4);
    CHECK(c.train.loss.ce == 0.5);
    CHECK(c.train.seed == 42);
    CHECK(c.data.synth.changes_min == 2);
    CHECK(c.data.synth.changes_max == 3);
    CHECK(c.data.synth.size == 96);
    CHECK(c.out == "runs/x");
}

TEST_CASE("parse errors carry the line and key") {
    CHECK(what_of([] { parse_config("[model]\nwidth = 3\n"); }).find("line 2") != std::string::npos);
    CHECK(what_of([] { parse_config("[model]\nwidth = 3\n"); }).find("model.width") != std::string::npos);
    CHECK(what_of([] { parse_config("[extra]\n"); }).find("unknown section") != std::string::npos);
    CHECK(what_of([] { parse_config("epochs = 3\n"); }).find("outside any section") != std::string::npos);
    CHECK(what_of([] { parse_config("[train]\nepochs\n"); }).find("key = value") != std::string::npos);
    CHECK(what_of([] { parse_config("[train]\nepochs = -1\n"); }).find("train.epochs") != std::string::npos);
    CHECK(what_of([] { parse_config("[train]\nlr = fast\n"); }).find("train.lr") != std::string::npos);
    CHECK(what_of([] { parse_config("[model]\nchannels = 1,2,3\n"); }).find("4 comma-separated") != std::string::npos);
    CHECK_THROWS_AS(parse_config("[model\n"), ConfigError);
}

TEST_CASE("a bad assignment character is named") {
    const auto msg = what_of([] { parse_config("[model]\nassignment = SGXG\n"); });
    CHECK(msg.find("'X'") != std::string::npos);
    CHECK(msg.find("model.assignment") != std::string::npos);
    CHECK_THROWS_AS(parse_config("[model]\nassignment = SGG\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\nassignment = ssgg\n"), ConfigError);
}

TEST_CASE("overrides") {
    RunConfig c;
    apply_override(c, "train.epochs=5");
    apply_override(c, " model.assignment = GGGG ");
    apply_override(c, "data.source=dir");
    apply_override(c, "data.dir=/tmp/pairs");
    CHECK(c.train.epochs == 5);
    CHECK(c.model.assignment.str() == "GGGG");
    CHECK(c.data.source == DataConfig::Source::Dir);
    CHECK(c.data.dir == "/tmp/pairs");
    CHECK_THROWS_AS(apply_override(c, "train.epochs"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "train.nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "data.source=web"), ConfigError);
}

TEST_CASE("canonical text round-trips and hashes stably") {
    RunConfig c;
    apply_override(c, "train.lr=0.0003");
    apply_override(c, "train.adam_eps=1e-10");
    apply_override(c, "data.jitter=0.1");
    apply_override(c, "model.assignment=SGSG");
    apply_override(c, "model.init_seed=3");
    const auto text = to_text(c);
    const auto back = parse_config(text);
    CHECK(to_text(back) == text);
    CHECK(back.train.adam.lr == c.train.adam.lr);
    CHECK(back.train.adam.eps == c.train.adam.eps);
    CHECK(back.data.synth.jitter == c.data.synth.jitter);
    CHECK(config_hash(back) == config_hash(c));

    RunConfig d = c;
    apply_override(d, "train.seed=1");
    CHECK(config_hash(d) != config_hash(c));
}

TEST_CASE("an odd double survives the round trip") {
    RunConfig c;
    c.train.adam.lr = 0.1 + 0.2;
    CHECK(parse_config(to_text(c)).train.adam.lr == c.train.adam.lr);
}

TEST_CASE("validation") {
    auto bad = [](const std::string& o) {
        RunConfig c;
        apply_override(c, o);
        return what_of([&] { validate(c); });
    };
    CHECK(bad("model.channels=16,16,64,128").find("channels") != std::string::npos);
    CHECK(bad("model.phi_heads=3").find("phi_heads") != std::string::npos);
    CHECK(bad("model.attn_heads=5").find("attn_heads") != std::string::npos);
    CHECK(bad("train.epochs=0").find("epochs") != std::string::npos);
    CHECK(bad("train.batch=0").find("batch") != std::string::npos);
    CHECK(bad("train.beta1=1").find("beta1") != std::string::npos);
    CHECK(bad("train.loss_dice=-1").find("loss") != std::string::npos);
    CHECK(bad("data.size=48").find("multiple of 32") != std::string::npos);
    CHECK(bad("data.source=dir").find("dir") != std::string::npos);
    CHECK(bad("data.count=0") != "");
}
