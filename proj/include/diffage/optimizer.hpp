// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/nn.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace diffage {

/// Adaptive-moment optimizer. Only parameters that received a gradient this
/// step are updated, each with its own bias-correction counter.
template <typename Scalar>
class Adam {
public:
    struct Slot {
        Tensor<Scalar> m, v;
        std::int64_t steps = 0;
    };

    Adam() = default;
    Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const nn::ParamList<Scalar>& params) {
        if (slots_.empty()) init(params);
        if (slots_.size() != params.size()) throw ContractViolation("Adam: parameter list changed size");
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto var = params[i].var;
            if (!var.has_grad()) continue;
            auto& slot = slots_[i];
            const auto& g = var.grad().data;
            slot.steps += 1;
            slot.m.data = Scalar(beta1_) * slot.m.data + Scalar(1.0 - beta1_) * g;
            slot.v.data = Scalar(beta2_) * slot.v.data + Scalar(1.0 - beta2_) * g.square();
            const double c1 = 1.0 - std::pow(beta1_, double(slot.steps));
            const double c2 = 1.0 - std::pow(beta2_, double(slot.steps));
            const Scalar step_size = Scalar(lr_ / c1);
            const Scalar inv_c2 = Scalar(1.0 / std::sqrt(c2));
            var.mutable_value().data -= step_size * slot.m.data / (slot.v.data.sqrt() * inv_c2 + Scalar(eps_));
        }
    }

    void init(const nn::ParamList<Scalar>& params) {
        slots_.clear();
        for (const auto& p : params) {
            slots_.push_back({Tensor<Scalar>::zeros_like(p.var.value()), Tensor<Scalar>::zeros_like(p.var.value()), 0});
        }
    }

    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<Slot> slots_;
};

template <typename Scalar>
void zero_grad(const nn::ParamList<Scalar>& params) {
    for (auto p : params) p.var.zero_grad();
}

}  // namespace diffage
