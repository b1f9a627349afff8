#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdx/model.hpp"

namespace cdx {

struct GradSuiteOptions {
    /// Random cases per op-level check.
    std::size_t seeds = 5;
    /// Side of the square end-to-end input; a multiple of 32.
    std::size_t model_size = 32;
    /// Coordinates probed per model tensor (images and every parameter).
    std::size_t model_coords = 2;
    std::uint64_t model_seed = 1;
    bool include_model = true;
    ModelConfig model;
};

struct GradSuiteEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords = 0;
    double seconds = 0.0;
    std::string worst;
};

/// Finite-difference checks of every differentiable op, each module and
/// the full model under the total loss. `on_entry` sees each row as it
/// finishes.
std::vector<GradSuiteEntry> run_grad_suite(const GradSuiteOptions& opts = {},
                                           const std::function<void(const GradSuiteEntry&)>& on_entry = {});

double worst_error(const std::vector<GradSuiteEntry>& entries);

}  // namespace cdx
