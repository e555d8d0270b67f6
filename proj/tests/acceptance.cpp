// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include "diffage/evaluation.hpp"
#include "diffage/training.hpp"

#include "metric_oracles.hpp"
#include "model_checks.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace diffage;
using namespace diffage::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& check) {
    const auto start = Clock::now();
    Outcome out;
    try {
        out = check();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (!out.pass) ++failures;
    std::printf("Criterion %d: %s: %s (%s; %.1f s)\n", id, out.pass ? "PASS" : "FAIL", title.c_str(), out.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

// ------------------------------------------------------------------ 1, 2

Outcome forward_marginals() {
    const auto s = make_linear_schedule(50, 1e-4, 0.02);
    const int draws = 10000;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    Eigen::ArrayXd x = Eigen::ArrayXd::Constant(draws, 0.7), noise(draws);
    bool ok = true;
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        for (int i = 0; i < draws; ++i) noise[i] = n01(rng);
        x = forward_step(x, t, s, noise);
        if (t != 5 && t != 25 && t != 49) continue;
        const double mean = x.mean();
        const double sd = std::sqrt((x - mean).square().sum() / (draws - 1));
        const double target_sd = std::sqrt(1 - s.alpha_bars[t]);
        const double z_mean = std::abs(mean - std::sqrt(s.alpha_bars[t]) * 0.7) / (target_sd / std::sqrt(draws));
        const double z_sd = std::abs(sd - target_sd) / (target_sd / std::sqrt(2.0 * (draws - 1)));
        worst = std::max({worst, z_mean, z_sd});
        ok = ok && z_mean < 3 && z_sd < 3;
    }
    return {ok, fmt("largest deviation %.2f standard errors", worst)};
}

Outcome oracle_inversion() {
    const auto s = default_schedule();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u01(0.01, 1.0);
    std::uniform_int_distribution<int> pick(0, s.num_steps - 1);
    std::normal_distribution<double> n01;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::ArrayXd x0(64), eps(64);
        for (int i = 0; i < 64; ++i) {
            x0[i] = u01(rng);
            eps[i] = n01(rng);
        }
        const double ab = s.alpha_bar(pick(rng));
        const Eigen::ArrayXd back = predict_x0_unclamped(q_sample(x0, eps, ab).eval(), eps, ab);
        worst = std::max(worst, ((back - x0).abs() / x0.abs()).maxCoeff());
    }
    return {worst <= 1e-6, fmt("max relative error %.2e over 100 pairs", worst)};
}

// ------------------------------------------------------------------ 3, 4

Outcome gradient_check() {
    CombinedLossProbe probe(12);
    const auto results = probe.check(20, 99);
    double worst = 0.0;
    for (const auto& r : results) worst = std::max(worst, r.relative_error);
    return {worst < 1e-3, fmt("8x8 network in double precision, worst relative error %.2e over 20 parameters", worst)};
}

Outcome semi_supervision() {
    TrainConfig cfg;
    cfg.preset = "tiny";
    cfg.precision = "float64";
    data::SynthOptions opt;
    opt.n = 6;
    opt.image_size = 8;
    opt.unlabeled_fraction = 0.0;
    const auto subjects = data::synth_generate(opt);
    Batch<double> labeled;
    labeled.images = Tensor<double>(6, 1, 8, 8);
    for (int i = 0; i < 6; ++i) {
        labeled.images.data.segment(i * 64, 64) = subjects[std::size_t(i)].image.reshaped<Eigen::RowMajor>();
        labeled.ages.push_back(subjects[std::size_t(i)].true_age);
    }
    auto unlabeled = labeled;
    for (auto& a : unlabeled.ages) a.reset();

    auto make = [] {
        ModelBundle<double> b(ModelConfig::tiny(), default_schedule(), 3);
        b.age_head.age_mean = 55.0;
        b.age_head.age_std = 20.0;
        return b;
    };
    auto with = make(), without = make();
    Adam<double> oa(1e-3, 0.9, 0.999, 1e-8), ob(1e-3, 0.9, 0.999, 1e-8);
    auto head_values = [](const ModelBundle<double>& b) {
        std::vector<Eigen::ArrayXd> out;
        for (const auto& p : b.age_head_params()) out.emplace_back(p.var.value().data.template cast<double>());
        return out;
    };
    const auto before = head_values(without);
    const auto la = training_step(with, oa, labeled, cfg, 2024);
    const auto lb = training_step(without, ob, unlabeled, cfg, 2024);
    const bool bitwise = la.diffusion_term == lb.diffusion_term;

    bool frozen = true, moved = false;
    const auto after_unlabeled = head_values(without), after_labeled = head_values(with);
    for (std::size_t i = 0; i < before.size(); ++i) {
        frozen = frozen && (after_unlabeled[i] == before[i]).all();
        moved = moved || !(after_labeled[i] == before[i]).all();
    }
    std::ostringstream os;
    os << "diffusion term " << (bitwise ? "bitwise identical" : "differs") << "; age head "
       << (frozen ? "unchanged" : "changed") << " on the unlabeled batch and " << (moved ? "updated" : "not updated")
       << " on the labeled batch";
    return {bitwise && frozen && moved && lb.age_term == 0.0, os.str()};
}

// ------------------------------------------------------------------ 5

Outcome metric_oracles() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(3, 60), coin(0, 1);
    std::normal_distribution<double> n01;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = size(rng);
        Vector x(n), y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            x[i] = 10 * n01(rng);
            y[i] = 0.5 * x[i] + 10 * n01(rng);
        }
        if (coin(rng)) y = y.array().round();
        const Vector b = y.head(size(rng) % n + 1);
        worst = std::max({worst, std::abs(eval::pearson_r(x, y).r - oracle_r(x, y)), std::abs(eval::mae(x, y) - oracle_mae(x, y)),
                          std::abs(eval::r_squared(x, y) - oracle_r2(x, y)),
                          std::abs(eval::ks_two_sample(x, b).statistic - oracle_ks(x, b))});
    }
    std::uniform_int_distribution<int> tie_value(0, 5);
    double worst_p = 0.0;
    for (Eigen::Index m = 1; m <= 8; ++m)
        for (Eigen::Index n = 1; n <= 8; ++n)
            for (int ties = 0; ties < 2; ++ties) {
                Vector a(m), b(n);
                for (auto& v : a) v = ties ? double(tie_value(rng)) : n01(rng);
                for (auto& v : b) v = ties ? double(tie_value(rng)) + 1 : n01(rng) + 0.8;
                worst_p = std::max(worst_p, std::abs(eval::ks_two_sample(a, b).p_value - oracle_ks_permutation(a, b)));
            }
    return {worst <= 1e-10 && worst_p <= 1e-10,
            fmt("max deviation %.1e on 1000 fixtures; exact KS p vs enumeration max deviation %.1e for sizes up to 8", worst, worst_p)};
}

// ------------------------------------------------------------------ 6 to 9

struct EndToEnd {
    fs::path root;
    data::Manifest manifest;
    std::vector<data::SampleRecord> test_records;
    std::vector<data::Image> test_images;
    std::map<std::string, double> truth;
    std::optional<ModelBundle<float>> bundle;
    eval::EvalReport report;
};

void build_end_to_end(EndToEnd& e) {
    data::SynthOptions opt;
    opt.n = 2000;
    opt.n_test = 400;
    opt.image_size = ModelConfig::reduced().unet.image_size;
    opt.age_min = 20;
    opt.age_max = 90;
    opt.unlabeled_fraction = 0.2;
    opt.seed = 7;
    const auto subjects = data::synth_generate(opt);
    fs::remove_all(e.root);
    data::write_synth_dataset(e.root / "data", subjects);
    for (const auto& s : subjects) e.truth[s.record.id] = s.true_age;
    e.manifest = data::load_manifest(e.root / "data" / "manifest.csv");

    const auto train_records = e.manifest.cohort(data::Cohort::train);
    TrainingData<float> train;
    train.image_size = opt.image_size;
    for (const auto& img : data::load_images(e.manifest, train_records, opt.image_size)) {
        train.images.push_back(img.cast<float>().reshaped<Eigen::RowMajor>());
    }
    for (const auto& r : train_records) {
        train.ids.push_back(r.id);
        train.ages.push_back(r.age_years);
    }

    TrainConfig cfg;
    cfg.preset = "reduced";
    cfg.max_steps = 5000;
    FitOptions fo;
    fo.out_dir = e.root / "model";
    fo.on_step = [](const LogRow& row) {
        if (row.step % 500 == 0) std::fprintf(stderr, "  step %d  %s\n", row.step, format_log_row(row).c_str());
    };
    auto result = fit(train, cfg, fo);
    e.bundle.emplace(std::move(result.bundle));

    e.test_records = e.manifest.cohort(data::Cohort::test);
    e.test_images = data::load_images(e.manifest, e.test_records, opt.image_size);
}

Outcome end_to_end(EndToEnd& e) {
    build_end_to_end(e);
    e.report = eval::evaluate(*e.bundle, e.manifest, data::Cohort::test, {});
    const double r = e.report.correlation ? e.report.correlation->r : 0.0;
    return {r >= 0.8 && e.report.mae <= 8.0,
            fmt("held-out r %.4f, MAE %.2f years over %.0f phantoms", r, e.report.mae, double(e.report.rows.size()))};
}

Outcome reconstruction(EndToEnd& e) {
    if (!e.bundle) return {false, "no model from the end-to-end run"};
    const int side = e.bundle->config.unet.image_size;
    Tensor<float> x0(50, 1, side, side);
    for (int i = 0; i < 50; ++i) x0.data.segment(Index(i) * side * side, side * side) = e.test_images[std::size_t(i)].cast<float>().reshaped<Eigen::RowMajor>();
    const auto cfg = ReverseStepConfig::evenly_spaced(e.bundle->schedule.num_steps, 50, 0.0);
    const auto out = reconstruct(*e.bundle, x0, cfg, 20230717);
    const double err = double((out.data - x0.data).abs().mean());
    return {err <= 0.08, fmt("mean absolute pixel error %.4f over 50 held-out phantoms, 50 deterministic steps", err)};
}

Outcome interpolation(EndToEnd& e) {
    if (!e.bundle) return {false, "no model from the end-to-end run"};
    std::size_t young = 0, old = 0;
    for (std::size_t i = 0; i < e.test_records.size(); ++i) {
        if (*e.test_records[i].age_years < *e.test_records[young].age_years) young = i;
        if (*e.test_records[i].age_years > *e.test_records[old].age_years) old = i;
    }
    const int side = e.bundle->config.unet.image_size;
    Tensor<float> pair(2, 1, side, side);
    pair.data.head(side * side) = e.test_images[young].cast<float>().reshaped<Eigen::RowMajor>();
    pair.data.tail(side * side) = e.test_images[old].cast<float>().reshaped<Eigen::RowMajor>();
    const auto z = semantic_encode(*e.bundle, pair);
    const std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
    Tensor<float> path(5, z.c(), z.h(), z.w());
    for (int k = 0; k < 5; ++k) path.matrix().row(k) = interpolate_latents(z.matrix().row(0), z.matrix().row(1), lambdas[std::size_t(k)]);
    const auto ages = age_predict(*e.bundle, path);
    int inversions = 0;
    double largest_drop = 0.0;
    for (int k = 1; k < 5; ++k) {
        const double drop = double(ages[k - 1] - ages[k]);
        if (drop > 0) {
            ++inversions;
            largest_drop = std::max(largest_drop, drop);
        }
    }
    std::ostringstream os;
    os << "ages " << *e.test_records[young].age_years << " to " << *e.test_records[old].age_years << ", predicted";
    for (int k = 0; k < 5; ++k) os << ' ' << fmt("%.2f", double(ages[k]));
    os << "; " << inversions << " inversion(s)";
    return {inversions == 0 || (inversions == 1 && largest_drop <= 1.0), os.str()};
}

Outcome reporting(EndToEnd& e) {
    if (!e.bundle) return {false, "no model from the end-to-end run"};
    std::mt19937_64 rng(99);
    std::normal_distribution<double> noise(0.0, 6.0);
    std::vector<eval::ExternalPrediction> external;
    for (const auto& r : e.test_records) external.push_back({r.id, *r.age_years + 3.0 + noise(rng)});
    const auto ext_path = e.root / "external_predictions.csv";
    eval::write_predictions(ext_path, external);

    std::vector<std::string> summaries;
    for (int run = 0; run < 2; ++run) {
        auto rep = eval::evaluate(*e.bundle, e.manifest, data::Cohort::test, {});
        rep.ks = eval::compare_pads(rep, eval::read_predictions(ext_path), "external");
        const auto dir = e.root / ("report_" + std::to_string(run));
        eval::write_report(dir, rep);
        std::ifstream in(dir / "summary.txt", std::ios::binary);
        std::ostringstream text;
        text << in.rdbuf();
        summaries.push_back(text.str());
    }
    const auto& text = summaries.front();
    bool complete = true;
    for (const char* field : {"Pearson r", "MAE", "R^2", "Brain-PAD      mean", "std", "KS vs external"})
        complete = complete && text.find(field) != std::string::npos;
    complete = complete && (text.find("(p = ") != std::string::npos || text.find("(p < ") != std::string::npos);
    std::cout << text;
    return {complete && summaries[0] == summaries[1],
            std::string(summaries[0] == summaries[1] ? "byte-identical" : "differs") + " across runs" +
                (complete ? ", all fields present" : ", missing fields")};
}

}  // namespace

int main(int argc, char** argv) {
    EndToEnd e;
    e.root = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_artifacts";

    report(1, "forward marginals match the closed form", forward_marginals);
    report(2, "oracle noise inverts q_sample", oracle_inversion);
    report(3, "combined-loss gradients match central differences", gradient_check);
    report(4, "semi-supervision contract", semi_supervision);
    report(5, "metrics match brute-force oracles", metric_oracles);
    report(6, "synthetic end-to-end age estimation", [&] { return end_to_end(e); });
    report(7, "reconstruction quality", [&] { return reconstruction(e); });
    report(8, "interpolation monotonicity", [&] { return interpolation(e); });
    report(9, "byte-stable evaluation report", [&] { return reporting(e); });

    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
