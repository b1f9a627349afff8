#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "cdx/data.hpp"
#include "cdx/model.hpp"
#include "cdx/trainer.hpp"

namespace cdx {

/// Bad configuration text, key or value. what() names the section.key.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DataConfig {
    enum class Source { Synth, Dir } source = Source::Synth;
    std::filesystem::path dir;  // Source::Dir
    std::size_t count = 8;      // Source::Synth
    SynthConfig synth;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::filesystem::path out = "runs/default";
    /// Seeds parameter initialization; the shuffle uses train.seed.
    std::uint64_t init_seed = 0;
};

/// Config grammar, line oriented:
///   # comment            (also after a value: "epochs = 5  # short")
///   [section]
///   key = value
/// Sections and keys:
///   [model]  channels = 16,32,64,128   assignment = SSGG   phi_heads = 4
///            attn_heads = 1            embed = 32          init_seed = 0
///   [train]  epochs = 200  batch = 2  lr = 1e-3  beta1 = 0.9  beta2 = 0.999
///            adam_eps = 1e-8  loss_ce = 1  loss_dice = 1  seed = 0
///   [data]   source = synth|dir  dir = path  count = 8  size = 64
///            seed = 0  changes = 1,4  blobs = 3,8  jitter = 0.05
///            texture = 0.03  removal = 0.3
///   [output] dir = runs/default
/// Unknown sections or keys are errors. Missing keys keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies one "section.key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Canonical text: every key, fixed order, round-trippable through
/// parse_config.
std::string to_text(const RunConfig& cfg);

/// 64-bit FNV-1a of to_text(cfg).
std::uint64_t config_hash(const RunConfig& cfg);

/// Model, data and training checks that parsing alone cannot make.
void validate(const RunConfig& cfg);

/// Synthetic samples or the pair directory, per cfg.data.
std::vector<BiTemporalSample> load_dataset(const DataConfig& cfg);

}  // namespace cdx
