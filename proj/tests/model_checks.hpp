// SPDX-License-Identifier: Apache-2.0
// Model-level oracles shared by the unit and acceptance suites.
#pragma once

#include "diffage/diffusion.hpp"
#include "diffage/networks.hpp"
#include "diffage/seed.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace diffage::testing {

struct GradientProbe {
    std::string name;
    Index index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double relative_error = 0.0;
};

/// Combined diffusion + age loss of the tiny configuration in double
/// precision, with every random draw pinned so repeated evaluation is a pure
/// function of the weights.
class CombinedLossProbe {
public:
    explicit CombinedLossProbe(std::uint64_t seed)
        : bundle_(ModelConfig::tiny(), make_linear_schedule(100, 1e-3, 0.05), seed), images_(3, 1, 8, 8), eps_(3, 1, 8, 8) {
        std::mt19937_64 rng(mix_seed(seed, 1));
        std::uniform_real_distribution<double> u01;
        std::normal_distribution<double> n01;
        for (Index i = 0; i < images_.size(); ++i) images_.data[i] = u01(rng);
        for (Index i = 0; i < eps_.size(); ++i) eps_.data[i] = n01(rng);
        t_ = {7, 42, 93};
        targets_.resize(3);
        targets_ << 30.0, 55.0, 80.0;
        bundle_.age_head.age_mean = 55.0;
        bundle_.age_head.age_std = 20.0;
        dropout_seed_ = mix_seed(seed, 2);
    }

    ModelBundle<double>& bundle() { return bundle_; }

    Var<double> loss() {
        nn::Rng dropout(dropout_seed_);
        const auto z = bundle_.encoder(Var<double>(images_));
        const Var<double> x_t(q_sample(images_, t_, eps_, bundle_.schedule));
        const auto diffusion = ops::sum_squared_error_mean(bundle_.noise_predictor(x_t, t_, z), eps_);
        const auto age = ops::scaled_mse(bundle_.age_head(z, Mode::train, &dropout), targets_, bundle_.age_head.age_std);
        return ops::add(diffusion, age);
    }

    /// Tape gradients against central differences at `count` random entries.
    std::vector<GradientProbe> check(int count, std::uint64_t pick_seed, double h = 1e-6) {
        auto params = bundle_.params();
        for (auto& p : params) p.var.zero_grad();
        auto out = loss();
        backward(out);
        std::mt19937_64 rng(pick_seed);
        std::int64_t total = 0;
        for (const auto& p : params) total += p.var.value().size();
        std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
        std::vector<GradientProbe> probes;
        for (int k = 0; k < count; ++k) {
            std::int64_t flat = pick(rng);
            std::size_t which = 0;
            while (flat >= params[which].var.value().size()) flat -= params[which].var.value().size(), ++which;
            auto& var = params[which].var;
            GradientProbe probe;
            probe.name = params[which].name;
            probe.index = static_cast<Index>(flat);
            probe.analytic = var.has_grad() ? var.grad().data[probe.index] : 0.0;
            const double saved = var.value().data[probe.index];
            var.mutable_value().data[probe.index] = saved + h;
            const double up = loss().item();
            var.mutable_value().data[probe.index] = saved - h;
            const double down = loss().item();
            var.mutable_value().data[probe.index] = saved;
            probe.numeric = (up - down) / (2 * h);
            const double scale = std::max({std::abs(probe.analytic), std::abs(probe.numeric), 1e-6});
            probe.relative_error = std::abs(probe.analytic - probe.numeric) / scale;
            probes.push_back(probe);
        }
        return probes;
    }

private:
    ModelBundle<double> bundle_;
    Tensor<double> images_, eps_;
    std::vector<int> t_;
    Eigen::ArrayXd targets_;
    std::uint64_t dropout_seed_ = 0;
};

}  // namespace diffage::testing
