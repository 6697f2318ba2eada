#pragma once

#include <map>

#include "symunet/model.hpp"

namespace symunet {

// lr(step) = lr_min + 0.5 (lr0 - lr_min)(1 + cos(pi step/total)); the
// endpoints are returned exactly.
inline double cosine_lr(std::int64_t step, std::int64_t total, double lr0, double lr_min) {
    if (step <= 0) return lr0;
    if (step >= total) return lr_min;
    const double t = static_cast<double>(step) / static_cast<double>(total);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * t));
}

template <typename T>
struct AdamWState {
    std::int64_t step = 0;
    std::map<std::string, std::vector<T>> m1;  // first moments
    std::map<std::string, std::vector<T>> m2;  // second moments
};

// One decoupled-weight-decay Adam update over a named parameter set. Reads
// the gradients accumulated on the parameter tensors; parameters without a
// gradient buffer are treated as g = 0.
template <typename T>
void adamw_step(std::map<std::string, Tensor<T>>& params, AdamWState<T>& state, double lr,
                double beta1, double beta2, double weight_decay, double eps = 1e-8) {
    const std::int64_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const double decay = 1.0 - lr * weight_decay;
    for (auto& [name, p] : params) {
        auto& m1 = state.m1[name];
        auto& m2 = state.m2[name];
        if (m1.empty()) m1.assign(p.data().size(), T(0));
        if (m2.empty()) m2.assign(p.data().size(), T(0));
        const bool has_g = p.has_grad();
        const std::vector<T>* gp = has_g ? &p.grad() : nullptr;
        if (has_g && !all_finite(*gp))
            throw TrainError("non-finite gradient in parameter '" + name + "'");
        for (size_t i = 0; i < p.data().size(); ++i) {
            const double g = has_g ? static_cast<double>((*gp)[i]) : 0.0;
            const double m = beta1 * static_cast<double>(m1[i]) + (1.0 - beta1) * g;
            const double v = beta2 * static_cast<double>(m2[i]) + (1.0 - beta2) * g * g;
            m1[i] = static_cast<T>(m);
            m2[i] = static_cast<T>(v);
            double theta = static_cast<double>(p.data()[i]);
            if (weight_decay != 0.0) theta *= decay;
            theta -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
            p.data()[i] = static_cast<T>(theta);
        }
    }
    ++state.step;
}

template <typename T>
void adamw_step(Model<T>& model, AdamWState<T>& state, double lr, double beta1, double beta2,
                double weight_decay, double eps = 1e-8) {
    adamw_step(model.params, state, lr, beta1, beta2, weight_decay, eps);
}

template <typename T>
void zero_grads(Model<T>& model) {
    model.for_each_param([](const std::string&, Tensor<T>& p) { p.zero_grad(); });
}

}  // namespace symunet
