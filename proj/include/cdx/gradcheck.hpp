#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdx/tensor.hpp"

namespace cdx {

enum class Stencil {
    /// (f(x+e) - f(x-e)) / 2e
    Central2,
    /// (-f(x+2e) + 8f(x+e) - 8f(x-e) + f(x-2e)) / 12e
    Central4,
};

struct GradCheckOptions {
    double eps = 1e-3;
    Stencil stencil = Stencil::Central4;
    /// Coordinates probed per input tensor; 0 probes every coordinate.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::string worst;  // "<input index>[<flat index>] analytic=.. numeric=.."
};

/// Compares backward() against central differences for every probed
/// coordinate of `inputs` (leaves that `f` reads). Per coordinate the error
/// is |a - n| / max(|a|, |n|, 1e-8); the report holds the maximum.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts = {});

/// Single-input convenience form: f is evaluated as f(x).
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps);

}  // namespace cdx
