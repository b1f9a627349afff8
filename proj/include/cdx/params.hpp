#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdx/rng.hpp"
#include "cdx/tensor.hpp"

namespace cdx {

struct ParamTensor {
    std::string name;
    Tensor value;
};

/// KaimingUniform: U(+-sqrt(6 / fan_in)), gain sqrt(2), for conv stacks
/// followed by a rectifier-like activation. FanInUniform: U(+-1 / sqrt(fan_in)),
/// the usual default for linear maps (Kaiming-uniform with a = sqrt(5)).
enum class Init { KaimingUniform, FanInUniform, Zeros, Ones };

/// Registry of every trainable tensor of a model. Names are unique;
/// registration order is the checkpoint and optimizer order.
class ParamStore {
public:
    /// `fan_in` is only used by the uniform inits.
    Tensor add(const std::string& name, Shape shape, Init init, Rng& rng, std::size_t fan_in = 0);

    const std::vector<ParamTensor>& params() const { return params_; }
    Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<ParamTensor> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Unreadable, truncated or incompatible checkpoint; what() names the
/// offending parameter when there is one.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary checkpoint, all integers and reals little-endian:
///   "CDXLCKPT" | u32 version (1) | u32 entry count
///   per entry: u32 name length | name bytes | u32 rank | rank x u64 dims |
///              numel x f64 values
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);

/// Loads values into an already-built store. Every registered parameter
/// must be present with an identical shape; mismatches throw naming it.
void load_checkpoint(ParamStore& store, const std::filesystem::path& path);

}  // namespace cdx
