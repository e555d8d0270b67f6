// SPDX-License-Identifier: Apache-2.0
#include "gradcheck.hpp"

#include <doctest.h>

using namespace diffage;
using diffage::testing::max_gradient_error;
using diffage::testing::random_tensor;

namespace {

Var<double> param(std::initializer_list<Index> dims, std::mt19937_64& rng, double scale = 1.0) {
    return Var<double>(random_tensor(diffage::testing::pad_shape(dims), rng, scale), true);
}

Var<double> reduce(const Var<double>& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ops::sum_squared_error_mean(y, random_tensor(y.shape(), rng));
}

}  // namespace

TEST_CASE("conv2d gradients match central differences") {
    std::mt19937_64 rng(1);
    for (Index stride : {1, 2}) {
        for (Index kernel : {1, 3}) {
            std::vector<Var<double>> in{param({2, 3, 5, 5}, rng), param({4, 3, kernel, kernel}, rng), param({1, 4}, rng)};
            const double err = max_gradient_error(in, [&](const auto& v) {
                return reduce(ops::conv2d(v[0], v[1], v[2], stride, kernel / 2), 7);
            });
            CHECK(err < 1e-6);
        }
    }
}

TEST_CASE("group norm, modulation and SiLU gradients") {
    std::mt19937_64 rng(2);
    std::vector<Var<double>> in{param({2, 4, 3, 3}, rng), param({1, 4}, rng), param({1, 4}, rng), param({2, 8}, rng, 0.3)};
    const double err = max_gradient_error(in, [](const auto& v) {
        return reduce(ops::silu(ops::modulate(ops::group_norm(v[0], v[1], v[2], 2), v[3])), 3);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("self-attention gradients") {
    std::mt19937_64 rng(3);
    std::vector<Var<double>> in{param({2, 3, 2, 3}, rng), param({9, 3}, rng, 0.5), param({1, 9}, rng, 0.5),
                                param({3, 3}, rng, 0.5), param({1, 3}, rng)};
    const double err = max_gradient_error(in, [](const auto& v) {
        return reduce(ops::self_attention(v[0], v[1], v[2], v[3], v[4]), 5);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("linear, concat, gather, batch norm, softplus gradients") {
    std::mt19937_64 rng(4);
    std::vector<Var<double>> in{param({5, 3}, rng), param({5, 2}, rng), param({4, 5}, rng), param({1, 4}, rng),
                                param({1, 4}, rng), param({1, 4}, rng)};
    ops::BatchNormStats<double> stats{Eigen::ArrayXd::Zero(4), Eigen::ArrayXd::Ones(4)};
    const double err = max_gradient_error(in, [&](const auto& v) {
        auto h = ops::linear(ops::concat_features(v[0], v[1]), v[2], v[3]);
        h = ops::gather_rows(h, {0, 2, 3, 4});
        h = ops::batch_norm(ops::relu(h), v[4], v[5], stats, true);
        return reduce(ops::softplus_affine(h, 0.3, 2.0), 9);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("upsample, flatten and scaled MSE gradients") {
    std::mt19937_64 rng(5);
    std::vector<Var<double>> in{param({2, 2, 2, 3}, rng)};
    const Eigen::ArrayXd target = Eigen::ArrayXd::LinSpaced(2 * 2 * 5 * 5, -1, 1);
    const double err = max_gradient_error(in, [&](const auto& v) {
        const auto flat = ops::flatten(ops::upsample_nearest(v[0], 5, 5));
        return ops::scaled_mse(ops::flatten(flat), target, 2.0);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("batch norm in eval mode uses running statistics") {
    ops::BatchNormStats<double> stats{Eigen::ArrayXd::Constant(2, 1.0), Eigen::ArrayXd::Constant(2, 4.0)};
    Tensor<double> x(1, 2);
    x.data << 3.0, 5.0;
    const Var<double> gamma(Tensor<double>::constant({1, 2, 1, 1}, 1.0)), beta(Tensor<double>::constant({1, 2, 1, 1}, 0.0));
    const auto y = ops::batch_norm(Var<double>(x), gamma, beta, stats, false);
    CHECK(y.value().data[0] == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
    CHECK(y.value().data[1] == doctest::Approx(4.0 / std::sqrt(4.0 + 1e-5)));
    CHECK(stats.running_mean[0] == 1.0);
}

TEST_CASE("no-grad guard skips tape recording") {
    const Var<double> w(Tensor<double>::constant({1, 1, 1, 1}, 2.0), true);
    {
        NoGradGuard guard;
        CHECK_FALSE(ops::scale(w, 3.0).requires_grad());
    }
    CHECK(ops::scale(w, 3.0).requires_grad());
}
