// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/errors.hpp"
#include "diffage/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace diffage {

/// Forward-process variance schedule. Steps are 0-based: index t holds the
/// quantities of diffusion step t + 1.
struct NoiseSchedule {
    int num_steps = 0;
    Eigen::ArrayXd betas;
    /// Cumulative products of (1 - beta) up to and including each step.
    Eigen::ArrayXd alpha_bars;

    double beta(int t) const { return betas[check(t)]; }
    double alpha_bar(int t) const { return alpha_bars[check(t)]; }

    int check(int t) const {
        if (t < 0 || t >= num_steps) {
            throw ContractViolation("step index " + std::to_string(t) + " outside [0, " +
                                    std::to_string(num_steps) + ")");
        }
        return t;
    }
};

inline NoiseSchedule make_schedule(Eigen::ArrayXd betas) {
    if (betas.size() == 0) throw ConfigError("schedule needs at least one step");
    if ((betas <= 0.0).any() || (betas >= 1.0).any()) throw ConfigError("betas must lie in (0, 1)");
    NoiseSchedule s;
    s.num_steps = static_cast<int>(betas.size());
    s.alpha_bars.resize(betas.size());
    double running = 1.0;
    for (Index t = 0; t < betas.size(); ++t) {
        running *= 1.0 - betas[t];
        s.alpha_bars[t] = running;
    }
    s.betas = std::move(betas);
    return s;
}

/// Betas linearly spaced from beta_start to beta_end inclusive.
inline NoiseSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 1) throw ConfigError("schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw ConfigError("linear schedule requires 0 < beta_start <= beta_end < 1");
    }
    Eigen::ArrayXd betas(num_steps);
    for (int t = 0; t < num_steps; ++t) {
        betas[t] = num_steps == 1 ? beta_start
                                  : beta_start + (beta_end - beta_start) * double(t) / double(num_steps - 1);
    }
    return make_schedule(std::move(betas));
}

inline NoiseSchedule default_schedule() { return make_linear_schedule(1000, 1e-4, 0.02); }

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps, as an Eigen expression.
template <typename DerivedX, typename DerivedE>
auto q_sample(const Eigen::ArrayBase<DerivedX>& x0, const Eigen::ArrayBase<DerivedE>& eps, double alpha_bar) {
    using Scalar = typename DerivedX::Scalar;
    if (x0.size() != eps.size()) throw ContractViolation("q_sample: x0 and eps sizes differ");
    return x0 * Scalar(std::sqrt(alpha_bar)) + eps * Scalar(std::sqrt(1.0 - alpha_bar));
}

/// Closed-form draw of x_t given x0 and caller-supplied standard-normal noise.
/// `t` may differ per sample: t[i] applies to sample i.
template <typename Scalar>
Tensor<Scalar> q_sample(const Tensor<Scalar>& x0, const std::vector<int>& t, const Tensor<Scalar>& eps,
                        const NoiseSchedule& sched) {
    if (!x0.same_shape(eps)) throw ContractViolation("q_sample: x0 and eps shapes differ");
    if (static_cast<Index>(t.size()) != x0.n()) throw ContractViolation("q_sample: one step index per sample");
    Tensor<Scalar> out(x0.shape);
    const Index d = x0.sample_size();
    for (Index i = 0; i < x0.n(); ++i) {
        out.data.segment(i * d, d) = q_sample(x0.data.segment(i * d, d), eps.data.segment(i * d, d), sched.alpha_bar(t[i]));
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> q_sample(const Tensor<Scalar>& x0, int t, const Tensor<Scalar>& eps, const NoiseSchedule& sched) {
    return q_sample(x0, std::vector<int>(x0.n(), t), eps, sched);
}

/// One Markov step of the forward process: sqrt(1 - beta_t) x_prev + sqrt(beta_t) noise.
template <typename DerivedX, typename DerivedN>
auto forward_step(const Eigen::ArrayBase<DerivedX>& x_prev, int t, const NoiseSchedule& sched,
                  const Eigen::ArrayBase<DerivedN>& noise) {
    using Scalar = typename DerivedX::Scalar;
    if (x_prev.size() != noise.size()) throw ContractViolation("forward_step: x_prev and noise sizes differ");
    const double beta = sched.beta(t);
    return x_prev * Scalar(std::sqrt(1.0 - beta)) + noise * Scalar(std::sqrt(beta));
}

}  // namespace diffage
