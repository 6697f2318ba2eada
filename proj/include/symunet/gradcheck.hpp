#pragma once

#include <functional>

#include "symunet/ops.hpp"

namespace symunet {

// Central finite-difference check of reverse-mode gradients, run at float64.
// `f` maps the leaf tensors to a scalar; returns the max over all elements of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& f,
                         std::vector<Tensor<double>> inputs, double eps = 1e-4) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor<double> out = f(inputs);
    check_dims(out.size() == 1, "grad_check: target must map to a scalar");
    if (!std::isfinite(out.data()[0]))
        throw TrainError("grad_check: non-finite forward value");
    out.backward();

    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) analytic.push_back(t.grad());

    double max_rel = 0.0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& t = inputs[ti];
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const double orig = t.data()[static_cast<size_t>(i)];
            double fp, fm;
            {
                NoGradGuard ng;
                t.data()[static_cast<size_t>(i)] = orig + eps;
                fp = f(inputs).data()[0];
                t.data()[static_cast<size_t>(i)] = orig - eps;
                fm = f(inputs).data()[0];
                t.data()[static_cast<size_t>(i)] = orig;
            }
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw TrainError("grad_check: non-finite perturbed value");
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[ti][static_cast<size_t>(i)];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

inline double grad_check(const std::function<Tensor<double>(Tensor<double>&)>& f,
                         Tensor<double> input, double eps = 1e-4) {
    return grad_check(
        [&f](std::vector<Tensor<double>>& v) -> Tensor<double> { return f(v[0]); },
        {std::move(input)}, eps);
}

}  // namespace symunet
