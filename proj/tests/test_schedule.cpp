#include "diffage/schedule.hpp"

#include <doctest.h>

#include <random>

using namespace diffage;

TEST_CASE("linear schedule small cases") {
    const auto one = make_linear_schedule(1, 0.5, 0.5);
    REQUIRE(one.num_steps == 1);
    CHECK(one.betas[0] == doctest::Approx(0.5));
    CHECK(one.alpha_bars[0] == doctest::Approx(0.5));

    const auto two = make_linear_schedule(2, 0.1, 0.3);
    CHECK(two.betas[0] == doctest::Approx(0.1));
    CHECK(two.betas[1] == doctest::Approx(0.3));
    CHECK(two.alpha_bars[0] == doctest::Approx(0.9));
    CHECK(two.alpha_bars[1] == doctest::Approx(0.63));
}

TEST_CASE("default schedule matches a brute-force cumulative product") {
    const auto s = default_schedule();
    REQUIRE(s.num_steps == 1000);
    CHECK(s.betas[0] == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(s.betas[999] == doctest::Approx(0.02).epsilon(1e-15));
    for (int t : {0, 1, 10, 500, 999}) {
        long double prod = 1.0L;
        for (int k = 0; k <= t; ++k) {
            const long double beta = 1e-4L + (0.02L - 1e-4L) * k / 999.0L;
            prod *= 1.0L - beta;
        }
        CHECK(std::abs(double(prod) - s.alpha_bars[t]) / double(prod) < 1e-12);
    }
    for (int t = 1; t < s.num_steps; ++t) REQUIRE(s.alpha_bars[t] < s.alpha_bars[t - 1]);
    CHECK(s.alpha_bars[999] > 0.0);
    CHECK(s.alpha_bars[0] < 1.0);
}

TEST_CASE("schedule construction rejects bad configurations") {
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 0.01), ConfigError);
    Eigen::ArrayXd bad(2);
    bad << 0.1, 1.5;
    CHECK_THROWS_AS(make_schedule(bad), ConfigError);
    const auto s = make_linear_schedule(5, 0.1, 0.2);
    CHECK_THROWS_AS(s.alpha_bar(5), ContractViolation);
    CHECK_THROWS_AS(s.beta(-1), ContractViolation);
}

TEST_CASE("q_sample closed form and limits") {
    Eigen::ArrayXd x0(1), eps(1);
    x0 << 2.0;
    eps << 1.0;
    CHECK(q_sample(x0, eps, 0.64)(0) == doctest::Approx(2.2));
    CHECK(q_sample(x0, eps, 1.0)(0) == doctest::Approx(2.0));
    CHECK(q_sample(x0, eps, 0.0)(0) == doctest::Approx(1.0));

    Eigen::ArrayXd wrong(2);
    CHECK_THROWS_AS(q_sample(x0, wrong, 0.5), ContractViolation);
}

TEST_CASE("q_sample is linear in x0 and eps") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Eigen::ArrayXd a(16), b(16), e1(16), e2(16);
    for (int i = 0; i < 16; ++i) {
        a[i] = n01(rng);
        b[i] = n01(rng);
        e1[i] = n01(rng);
        e2[i] = n01(rng);
    }
    const double ab = 0.37;
    const Eigen::ArrayXd lhs = q_sample((2.0 * a + b).eval(), (2.0 * e1 + e2).eval(), ab);
    const Eigen::ArrayXd rhs = 2.0 * q_sample(a, e1, ab) + q_sample(b, e2, ab);
    CHECK((lhs - rhs).abs().maxCoeff() < 1e-12);
}

TEST_CASE("tensor q_sample uses the per-sample step") {
    const auto s = make_linear_schedule(10, 0.05, 0.2);
    Tensor<double> x0(2, 1, 2, 2), eps(2, 1, 2, 2);
    x0.data.setConstant(1.0);
    eps.data.setConstant(-1.0);
    const auto out = q_sample(x0, std::vector<int>{0, 9}, eps, s);
    CHECK(out.data[0] == doctest::Approx(std::sqrt(s.alpha_bars[0]) - std::sqrt(1 - s.alpha_bars[0])));
    CHECK(out.data[4] == doctest::Approx(std::sqrt(s.alpha_bars[9]) - std::sqrt(1 - s.alpha_bars[9])));
    CHECK_THROWS_AS(q_sample(x0, std::vector<int>{0, 10}, eps, s), ContractViolation);
}

TEST_CASE("forward_step limits") {
    Eigen::ArrayXd x(3), noise(3);
    x << 0.1, 0.5, 0.9;
    noise << 1.0, -2.0, 0.5;
    Eigen::ArrayXd tiny(1);
    tiny << 1e-15;
    const auto identity = make_schedule(tiny);
    CHECK((forward_step(x, 0, identity, noise) - x).abs().maxCoeff() < 1e-7);
    Eigen::ArrayXd huge(1);
    huge << 1.0 - 1e-12;
    const auto destroy = make_schedule(huge);
    CHECK((forward_step(Eigen::ArrayXd::Zero(3).eval(), 0, destroy, noise) - noise).abs().maxCoeff() < 1e-9);
}

TEST_CASE("iterated forward steps match the closed-form marginal") {
    const auto s = make_linear_schedule(50, 1e-4, 0.02);
    const int draws = 10000;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    Eigen::ArrayXd x = Eigen::ArrayXd::Constant(draws, 0.7), noise(draws);
    for (int t = 0; t < 50; ++t) {
        for (int i = 0; i < draws; ++i) noise[i] = n01(rng);
        x = forward_step(x, t, s, noise);
        if (t == 5 || t == 25 || t == 49) {
            const double mean = x.mean();
            const double sd = std::sqrt((x - mean).square().sum() / (draws - 1));
            const double target_sd = std::sqrt(1 - s.alpha_bars[t]);
            CHECK(std::abs(mean - std::sqrt(s.alpha_bars[t]) * 0.7) < 3 * target_sd / std::sqrt(draws));
            CHECK(std::abs(sd - target_sd) < 3 * target_sd / std::sqrt(2.0 * (draws - 1)));
        }
    }
}
