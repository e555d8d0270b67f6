// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/networks.hpp"
#include "diffage/schedule.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace diffage {

/// Batch mean of the per-sample squared L2 norm of (eps_pred - eps).
template <typename Scalar>
double diffusion_loss(const Tensor<Scalar>& eps_pred, const Tensor<Scalar>& eps) {
    if (!eps_pred.same_shape(eps)) throw ContractViolation("diffusion_loss: shape mismatch");
    if (eps.n() == 0) throw ContractViolation("diffusion_loss: empty batch");
    return (eps_pred.data.template cast<double>() - eps.data.template cast<double>()).square().sum() / double(eps.n());
}

/// (x_t - sqrt(1 - alpha_bar) eps) / sqrt(alpha_bar), without clamping.
template <typename DerivedX, typename DerivedE>
auto predict_x0_unclamped(const Eigen::ArrayBase<DerivedX>& x_t, const Eigen::ArrayBase<DerivedE>& eps_pred,
                          double alpha_bar) {
    using Scalar = typename DerivedX::Scalar;
    if (!(alpha_bar > 0.0)) throw DegenerateStep("predict_x0: alpha_bar is zero");
    if (x_t.size() != eps_pred.size()) throw ContractViolation("predict_x0: size mismatch");
    return (x_t - eps_pred * Scalar(std::sqrt(1.0 - alpha_bar))) * Scalar(1.0 / std::sqrt(alpha_bar));
}

/// Clean-image estimate clamped to the pixel range [0, 1].
template <typename DerivedX, typename DerivedE>
auto predict_x0(const Eigen::ArrayBase<DerivedX>& x_t, const Eigen::ArrayBase<DerivedE>& eps_pred, double alpha_bar) {
    using Scalar = typename DerivedX::Scalar;
    return predict_x0_unclamped(x_t, eps_pred, alpha_bar).max(Scalar(0)).min(Scalar(1));
}

template <typename Scalar>
Tensor<Scalar> predict_x0(const Tensor<Scalar>& x_t, const Tensor<Scalar>& eps_pred, int t, const NoiseSchedule& sched) {
    Tensor<Scalar> out(x_t.shape);
    out.data = predict_x0(x_t.data, eps_pred.data, sched.alpha_bar(t));
    return out;
}

/// Sub-sequence of schedule steps visited by the sampler, plus its stochasticity.
struct ReverseStepConfig {
    double eta = 0.0;
    int num_inference_steps = 50;
    std::vector<int> step_indices;

    /// `count` indices evenly spaced from num_steps - 1 down to 0.
    static ReverseStepConfig evenly_spaced(int num_steps, int count, double eta = 0.0) {
        if (count < 1 || count > num_steps) throw ConfigError("num_inference_steps must lie in [1, T]");
        ReverseStepConfig cfg;
        cfg.eta = eta;
        cfg.num_inference_steps = count;
        for (int j = 0; j < count; ++j) {
            const double pos = count == 1 ? 0.0 : double(count - 1 - j) / double(count - 1);
            cfg.step_indices.push_back(static_cast<int>(std::lround(pos * double(num_steps - 1))));
        }
        if (count == 1) cfg.step_indices = {num_steps - 1};
        cfg.validate(num_steps);
        return cfg;
    }

    void validate(int num_steps) const {
        if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0, 1]");
        if (step_indices.empty()) throw ConfigError("step_indices must not be empty");
        for (std::size_t j = 0; j < step_indices.size(); ++j) {
            if (step_indices[j] < 0 || step_indices[j] >= num_steps) throw ConfigError("step index out of range");
            if (j > 0 && step_indices[j] >= step_indices[j - 1]) throw ConfigError("step_indices must strictly decrease");
        }
    }
};

/// Callable (x_t, t, z_sem) -> predicted noise.
template <typename Scalar>
using NoiseModel = std::function<Tensor<Scalar>(const Tensor<Scalar>&, int, const Tensor<Scalar>&)>;

template <typename Scalar>
NoiseModel<Scalar> as_noise_model(const ModelBundle<Scalar>& bundle) {
    return [&bundle](const Tensor<Scalar>& x_t, int t, const Tensor<Scalar>& z) {
        return noise_predict(bundle, x_t, std::vector<int>(x_t.n(), t), z);
    };
}

/// One conditioned reverse update from step t to t_next (t_next < 0 means the
/// clean image). With eta = 0 no noise is consumed.
template <typename Scalar>
Tensor<Scalar> reverse_step(const Tensor<Scalar>& x_t, int t, int t_next, const Tensor<Scalar>& z_sem,
                            const NoiseModel<Scalar>& model, const NoiseSchedule& sched, double eta,
                            const Tensor<Scalar>* noise = nullptr) {
    if (t_next >= t) throw ContractViolation("reverse_step: t_next must precede t");
    const double ab_t = sched.alpha_bar(t);
    const double ab_next = t_next < 0 ? 1.0 : sched.alpha_bar(t_next);
    const bool stochastic = eta > 0.0 && t_next >= 0;
    if (stochastic && !noise) throw ContractViolation("reverse_step: eta > 0 requires a noise tensor");

    const Tensor<Scalar> eps_pred = model(x_t, t, z_sem);
    if (!eps_pred.same_shape(x_t)) throw ContractViolation("reverse_step: model output shape mismatch");
    const auto x0_hat = predict_x0(x_t.data, eps_pred.data, ab_t).eval();

    double sigma = 0.0;
    if (stochastic) sigma = eta * std::sqrt((1.0 - ab_next) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_next);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_next - sigma * sigma));

    Tensor<Scalar> out(x_t.shape);
    out.data = x0_hat * Scalar(std::sqrt(ab_next)) + eps_pred.data * Scalar(dir);
    if (stochastic) {
        if (!noise->same_shape(x_t)) throw ContractViolation("reverse_step: noise shape mismatch");
        out.data += noise->data * Scalar(sigma);
    }
    return out;
}

template <typename Scalar>
Tensor<Scalar> standard_normal(const std::array<Index, 4>& shape, std::mt19937_64& rng) {
    Tensor<Scalar> out(shape);
    std::normal_distribution<double> dist;
    for (Index i = 0; i < out.size(); ++i) out.data[i] = Scalar(dist(rng));
    return out;
}

/// Runs the configured reverse trajectory from x_T down to a clean image.
/// Stochastic steps draw their noise from `rng`.
template <typename Scalar>
Tensor<Scalar> decode(const Tensor<Scalar>& x_T, const Tensor<Scalar>& z_sem, const NoiseModel<Scalar>& model,
                      const NoiseSchedule& sched, const ReverseStepConfig& cfg, std::mt19937_64& rng) {
    cfg.validate(sched.num_steps);
    Tensor<Scalar> x = x_T;
    for (std::size_t j = 0; j < cfg.step_indices.size(); ++j) {
        const int t = cfg.step_indices[j];
        const int t_next = j + 1 < cfg.step_indices.size() ? cfg.step_indices[j + 1] : -1;
        if (cfg.eta > 0.0 && t_next >= 0) {
            const auto noise = standard_normal<Scalar>(x.shape, rng);
            x = reverse_step(x, t, t_next, z_sem, model, sched, cfg.eta, &noise);
        } else {
            x = reverse_step(x, t, t_next, z_sem, model, sched, cfg.eta);
        }
    }
    x.data = x.data.max(Scalar(0)).min(Scalar(1));
    return x;
}

/// Noises x0 in closed form to the first sampler step with seeded noise.
template <typename Scalar>
Tensor<Scalar> encode_stochastic(const Tensor<Scalar>& x0, const NoiseSchedule& sched, const ReverseStepConfig& cfg,
                                 std::mt19937_64& rng) {
    cfg.validate(sched.num_steps);
    const auto eps = standard_normal<Scalar>(x0.shape, rng);
    return q_sample(x0, cfg.step_indices.front(), eps, sched);
}

/// Closed-form encode to the terminal step, then conditioned reverse steps.
template <typename Scalar>
Tensor<Scalar> reconstruct(const Tensor<Scalar>& x0, const Tensor<Scalar>& z_sem, const NoiseModel<Scalar>& model,
                           const NoiseSchedule& sched, const ReverseStepConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto x_T = encode_stochastic(x0, sched, cfg, rng);
    return decode(x_T, z_sem, model, sched, cfg, rng);
}

template <typename Scalar>
Tensor<Scalar> reconstruct(const ModelBundle<Scalar>& bundle, const Tensor<Scalar>& x0, const ReverseStepConfig& cfg,
                           std::uint64_t seed) {
    return reconstruct(x0, semantic_encode(bundle, x0), as_noise_model(bundle), bundle.schedule, cfg, seed);
}

/// (1 - lam) z_a + lam z_b.
template <typename DerivedA, typename DerivedB>
auto interpolate_latents(const Eigen::MatrixBase<DerivedA>& z_a, const Eigen::MatrixBase<DerivedB>& z_b, double lam) {
    using Scalar = typename DerivedA::Scalar;
    if (!(lam >= 0.0 && lam <= 1.0)) throw ContractViolation("interpolate_latents: lambda must lie in [0, 1]");
    if (z_a.size() != z_b.size()) throw ContractViolation("interpolate_latents: dimension mismatch");
    return (z_a * Scalar(1.0 - lam) + z_b * Scalar(lam)).eval();
}

}  // namespace diffage
