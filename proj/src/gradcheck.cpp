#include "cdx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cdx/rng.hpp"

namespace cdx {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts) {
    for (auto& x : inputs) {
        x.set_requires_grad(true);
        x.zero_grad();
    }
    Tensor loss = f();
    if (loss.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued, got " + shape_str(loss.shape()));
    backward(loss);

    Rng rng(opts.seed);
    GradCheckReport rep;
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& x = inputs[t];
        std::vector<double> analytic(x.grad().begin(), x.grad().end());
        std::vector<std::size_t> coords(x.numel());
        std::iota(coords.begin(), coords.end(), 0);
        if (opts.max_coords_per_tensor && coords.size() > opts.max_coords_per_tensor) {
            // Partial Fisher-Yates: a seeded random subset.
            for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
                auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                  static_cast<std::int64_t>(coords.size() - 1)));
                std::swap(coords[i], coords[j]);
            }
            coords.resize(opts.max_coords_per_tensor);
        }
        auto data = x.data_mut();
        for (auto i : coords) {
            const double orig = data[i];
            auto at = [&](double offset) {
                data[i] = orig + offset;
                return f().item();
            };
            const double e = opts.eps;
            double numeric = 0.0;
            if (opts.stencil == Stencil::Central2) {
                numeric = (at(e) - at(-e)) / (2.0 * e);
            } else {
                numeric = (-at(2 * e) + 8.0 * at(e) - 8.0 * at(-e) + at(-2 * e)) / (12.0 * e);
            }
            data[i] = orig;
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            ++rep.coords_checked;
            if (err > rep.max_rel_error || rep.worst.empty()) {
                rep.max_rel_error = std::max(rep.max_rel_error, err);
                if (err >= rep.max_rel_error) {
                    std::ostringstream os;
                    os << t << '[' << i << "] analytic=" << a << " numeric=" << numeric;
                    rep.worst = os.str();
                }
            }
        }
    }
    return rep;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
    GradCheckOptions opts;
    opts.eps = eps;
    return grad_check([&] { return f(x); }, {x}, opts).max_rel_error;
}

}  // namespace cdx
