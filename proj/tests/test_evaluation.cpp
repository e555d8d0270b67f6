#include "diffage/evaluation.hpp"
#include "metric_oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

using namespace diffage;
using namespace diffage::eval;
using namespace diffage::testing;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    std::copy(v.begin(), v.end(), out.data());
    return out;
}

Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 10.0) {
    std::normal_distribution<double> n01;
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * n01(rng);
    return v;
}

std::vector<RecordRow> rows_for(const Vector& chron, const Vector& pred) {
    std::vector<RecordRow> rows;
    for (Eigen::Index i = 0; i < chron.size(); ++i)
        rows.push_back({"s" + std::to_string(i), chron[i], pred[i], pred[i] - chron[i], std::nullopt});
    return rows;
}

}  // namespace

TEST_CASE("pearson fixtures") {
    CHECK(pearson_r(vec({1, 2, 3, 4}), vec({2, 4, 6, 8})).r == doctest::Approx(1.0));
    CHECK(pearson_r(vec({1, 2, 3, 4}), vec({-1, -2, -3, -4})).r == doctest::Approx(-1.0));
    const auto c = pearson_r(vec({1, 2, 3, 4}), vec({1, 3, 2, 5}));
    CHECK(std::abs(c.r - oracle_r(vec({1, 2, 3, 4}), vec({1, 3, 2, 5}))) < 1e-12);
    const double t = c.r * std::sqrt(2.0 / (1 - c.r * c.r));
    CHECK(std::abs(c.p_value - oracle_t_two_sided(t, 2)) < 1e-8);
    CHECK(c.n == 4);
    CHECK_THROWS_AS(pearson_r(vec({1, 2}), vec({1, 2})), UndefinedStatistic);
    CHECK_THROWS_AS(pearson_r(vec({1, 1, 1}), vec({1, 2, 3})), UndefinedStatistic);
    CHECK_THROWS_AS(pearson_r(vec({1, 2, 3}), vec({1, 2})), ContractViolation);
}

TEST_CASE("mae and r-squared fixtures") {
    CHECK(mae(vec({0, 4}), vec({2, 2})) == 2.0);
    CHECK(mae(vec({1, 2, 3}), vec({1, 2, 3})) == 0.0);
    CHECK(mae(vec({1, 2, 3}), vec({1, 2, 3.5})) > 0.0);
    CHECK_THROWS_AS(mae(vec({1}), vec({1, 2})), ContractViolation);
    CHECK_THROWS_AS(mae(Vector(), Vector()), ContractViolation);

    const auto truth = vec({10, 20, 30, 40});
    CHECK(r_squared(truth, truth) == 1.0);
    CHECK(r_squared(Vector::Constant(4, 25.0), truth) == doctest::Approx(0.0));
    const auto worse = vec({40, 30, 20, 10});
    CHECK(r_squared(worse, truth) == doctest::Approx(oracle_r2(worse, truth)).epsilon(1e-12));
    CHECK(r_squared(worse, truth) < 0.0);
    CHECK_THROWS_AS(r_squared(truth, Vector::Constant(4, 3.0)), UndefinedStatistic);
}

TEST_CASE("ks fixtures") {
    CHECK(ks_two_sample(vec({1, 2, 3}), vec({1, 2, 3})).statistic == 0.0);
    CHECK(ks_two_sample(vec({1, 2, 3}), vec({1, 2, 3})).p_value == 1.0);
    const auto disjoint = ks_two_sample(vec({0, 1}), vec({10, 11}));
    CHECK(disjoint.statistic == 1.0);
    CHECK(disjoint.exact);
    CHECK(disjoint.p_value == doctest::Approx(oracle_ks_permutation(vec({0, 1}), vec({10, 11}))));
    const auto shifted = ks_two_sample(vec({1, 2, 3}), vec({2, 3, 4}));
    CHECK(shifted.statistic == doctest::Approx(oracle_ks(vec({1, 2, 3}), vec({2, 3, 4}))));
    CHECK(shifted.statistic == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(ks_two_sample(Vector(), vec({1})), ContractViolation);
}

TEST_CASE("metrics match definitional oracles on random fixtures") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(3, 60);
    std::uniform_int_distribution<int> coin(0, 1);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = size(rng);
        const auto x = random_vector(rng, n);
        Vector y = 0.5 * x + random_vector(rng, n);
        if (coin(rng)) y = y.array().round();  // exercise ties in KS
        const Vector b = y.head(size(rng) % n + 1);
        worst = std::max({worst, std::abs(pearson_r(x, y).r - oracle_r(x, y)), std::abs(mae(x, y) - oracle_mae(x, y)),
                          std::abs(r_squared(x, y) - oracle_r2(x, y)), std::abs(ks_two_sample(x, b).statistic - oracle_ks(x, b))});
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("exact ks p-values agree with permutation enumeration up to size 8") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> value(0, 5);
    std::normal_distribution<double> n01;
    for (Eigen::Index m = 1; m <= 8; ++m) {
        for (Eigen::Index n = 1; n <= 8; ++n) {
            for (int variant = 0; variant < 2; ++variant) {
                Vector a(m), b(n);
                for (auto& v : a) v = variant ? double(value(rng)) : n01(rng);
                for (auto& v : b) v = variant ? double(value(rng)) + 1 : n01(rng) + 0.8;
                const auto ks = ks_two_sample(a, b);
                CHECK(ks.exact);
                CHECK_MESSAGE(std::abs(ks.p_value - oracle_ks_permutation(a, b)) < 1e-10,
                              "m=" << m << " n=" << n << " ties=" << variant);
            }
        }
    }
}

TEST_CASE("ks symmetry, monotone invariance and the asymptotic branch") {
    std::mt19937_64 rng(5);
    const auto a = random_vector(rng, 40), b = random_vector(rng, 55, 12.0);
    const auto ab = ks_two_sample(a, b), ba = ks_two_sample(b, a);
    CHECK(ab.statistic == ba.statistic);
    CHECK(ab.p_value == ba.p_value);
    CHECK(!ab.exact);
    const Vector ea = a.array().exp(), eb = b.array().exp();
    CHECK(ks_two_sample(ea, eb).statistic == ab.statistic);

    const double ne = 40.0 * 55.0 / 95.0;
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * ab.statistic;
    CHECK(ab.p_value == doctest::Approx(oracle_kolmogorov_tail(lambda)).epsilon(1e-12));
    CHECK(kolmogorov_tail(1.358) == doctest::Approx(0.05).epsilon(1e-2));
    CHECK(kolmogorov_tail(0.0) == 1.0);
}

TEST_CASE("survival association delegates to pearson") {
    const auto pads = vec({-3, 1, 4, 2, 8});
    CHECK(survival_association(pads, pads).r == doctest::Approx(1.0));
    const auto months = vec({10, 14, 30, 12, 40});
    CHECK(std::abs(survival_association(pads, months).r - oracle_r(pads, months)) < 1e-12);
    CHECK(survival_association(pads, months).p_value == pearson_r(pads, months).p_value);
}

TEST_CASE("pearson is invariant under positive affine maps") {
    std::mt19937_64 rng(3);
    const auto x = random_vector(rng, 30), y = random_vector(rng, 30);
    const double r = pearson_r(x, y).r;
    for (double a : {0.01, 3.0, 250.0})
        for (double b : {-40.0, 0.0, 7.5}) {
            const Vector ax = (a * x.array() + b).matrix();
            const Vector ay = (a * y.array() + b).matrix();
            CHECK(std::abs(pearson_r(ax, y).r - r) < 1e-10);
            CHECK(std::abs(pearson_r(x, ay).r - r) < 1e-10);
        }
}

TEST_CASE("PAD summary rendering") {
    CHECK(format_pad_summary(-6.19, 27.29) == "mean -6.19, std 27.29");
    CHECK(format_pad_summary(-6.194, 27.286) == "mean -6.19, std 27.29");
    CHECK(format_p_value(0.0123456) == "0.0123");
    CHECK(format_p_value(3.2e-7) == "3.20e-07");
    CHECK(format_p_value(0.0) == "< 1e-300");
}

TEST_CASE("report aggregates are recomputable from the emitted table") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> age(20, 90);
    std::normal_distribution<double> noise(0, 6);
    Vector chron(50), pred(50);
    for (int i = 0; i < 50; ++i) {
        chron[i] = age(rng);
        pred[i] = chron[i] + noise(rng) - 2.0;
    }
    for (bool correct : {false, true}) {
        ReportOptions opt;
        opt.bias_correct = correct;
        const auto report = build_report("test", rows_for(chron, pred), opt);
        CHECK(report.bias_corrected == correct);
        const auto parsed = parse_table(render_table(report));
        REQUIRE(parsed.size() == 50);
        Vector c(50), p(50), pad(50);
        for (int i = 0; i < 50; ++i) {
            c[i] = parsed[i].chronological_age;
            p[i] = parsed[i].predicted_age;
            pad[i] = parsed[i].pad;
            CHECK(parsed[i].id == report.rows[i].id);
            CHECK(pad[i] == p[i] - c[i]);
        }
        CHECK(mae(p, c) == report.mae);
        CHECK(pearson_r(p, c).r == report.correlation->r);
        CHECK(pearson_r(p, c).p_value == report.correlation->p_value);
        CHECK(r_squared(p, c) == *report.r_squared);
        CHECK(pad.mean() == report.pad_mean);
        CHECK(std::sqrt((pad.array() - pad.mean()).square().mean()) == report.pad_std);
        if (correct) {
            // Residual PAD is uncorrelated with chronological age after the linear correction.
            CHECK(std::abs(oracle_r(pad, c)) < 1e-8);
            CHECK(std::abs(report.pad_mean) < 1e-9);
        }
    }
}

TEST_CASE("single-record cohort flags the undefined statistics") {
    const auto report = build_report("test", rows_for(vec({50}), vec({47})));
    CHECK(!report.correlation);
    CHECK(!report.r_squared);
    CHECK(report.mae == 3.0);
    CHECK(report.pad_mean == -3.0);
    CHECK(report.pad_std == 0.0);
    CHECK(!report.notes.empty());
    CHECK(render_summary(report).find("insufficient n") != std::string::npos);
    CHECK_THROWS_AS(build_report("test", {}), DataError);
}

TEST_CASE("survival block appears when survival times are present") {
    auto rows = rows_for(vec({50, 60, 70, 55}), vec({52, 58, 75, 50}));
    const double months[] = {20, 30, 12, 40};
    for (int i = 0; i < 4; ++i) rows[i].survival_months = months[i];
    const auto report = build_report("patient", rows);
    REQUIRE(report.survival);
    CHECK(report.survival->n == 4);
    CHECK(std::abs(report.survival->r - oracle_r(vec({2, -2, 5, -5}), vec({20, 30, 12, 40}))) < 1e-12);
}

TEST_CASE("external comparison and byte-stable rendering") {
    const auto report_rows = rows_for(vec({30, 40, 50, 60, 70}), vec({33, 38, 55, 58, 71}));
    auto report = build_report("test", report_rows);
    const std::vector<ExternalPrediction> external{{"s0", 35}, {"s1", 49}, {"s2", 41}, {"s3", 70}, {"s4", 60}};
    const auto path = std::filesystem::temp_directory_path() / "diffage_external.csv";
    write_predictions(path, external);
    const auto back = read_predictions(path);
    REQUIRE(back.size() == 5);
    CHECK(back[3].predicted_age == 70.0);
    report.ks = compare_pads(report, back, "baseline");
    const Vector ours = vec({3, -2, 5, -2, 1}), theirs = vec({5, 9, -9, 10, -10});
    CHECK(report.ks->statistic == doctest::Approx(oracle_ks(ours, theirs)));
    CHECK(report.ks->p_value == doctest::Approx(oracle_ks_permutation(ours, theirs)).epsilon(1e-10));
    CHECK(render_summary(report) == render_summary(report));
    CHECK(render_summary(report).find("KS vs baseline") != std::string::npos);
    CHECK(render_key_values(report) == render_key_values(report));
    CHECK(render_scatter_svg(report).find("<svg") == 0);
    CHECK(render_pad_boxplot_svg(report).find("<svg") == 0);

    const std::vector<ExternalPrediction> stranger{{"zz", 40}};
    CHECK_THROWS_AS(compare_pads(report, stranger, "baseline"), DataError);
    std::filesystem::remove(path);
}
