#pragma once

#include <cmath>
#include <functional>

#include "mmfusion/graph.hpp"
#include "mmfusion/ops.hpp"

namespace mmf {

// Central-difference gradient verification in f64. fn must map x to a scalar
// tensor and be smooth at x (callers keep random inputs away from max/pool
// kinks). Returns the max over coordinates of
// |analytic - numeric| / max(1e-8, |numeric|).
inline double grad_check(const std::function<TensorD(const TensorD&)>& fn, TensorD x, double eps = 1e-5) {
    x.set_requires_grad(true);
    x.zero_grad();

    std::vector<double> analytic;
    {
        GraphD g;
        GraphD::Scope scope(g);
        TensorD y = fn(x);
        g.backward(y);
        analytic = x.grad();
    }

    double max_rel = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = x.data()[i];
        x.data()[i] = orig + eps;
        const double f_plus = fn(x).item();
        x.data()[i] = orig - eps;
        const double f_minus = fn(x).item();
        x.data()[i] = orig;
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double rel = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace mmf
