// SPDX-License-Identifier: Apache-2.0
#include "diffage/data.hpp"
#include "diffage/seed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace diffage::data {

namespace {

constexpr double kHeadRx = 0.78, kHeadRy = 0.90;
constexpr double kWhite = 0.75, kGray = 0.45, kVentricle = 0.10;
constexpr double kEdge = 0.015;
constexpr double kVentricleAspect = 0.75;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string padded_id(const char* prefix, int index, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%0*d", prefix, width, index);
    return buf;
}

Image render_phantom(double age, const SynthOptions& opt, std::mt19937_64& rng) {
    const auto geom = phantom_geometry(age, opt.age_min, opt.age_max);
    std::uniform_real_distribution<double> head_jitter(-0.04, 0.04), vent_jitter(-0.05, 0.05);
    const double rx = kHeadRx * (1.0 + head_jitter(rng));
    const double ry = kHeadRy * (1.0 + head_jitter(rng));
    const double vr = geom.ventricle_radius * (1.0 + vent_jitter(rng));
    std::normal_distribution<double> noise(0.0, opt.noise_std);

    const int s = opt.image_size;
    Image img(s, s);
    for (int y = 0; y < s; ++y) {
        const double v = (y + 0.5) / s * 2.0 - 1.0;
        for (int x = 0; x < s; ++x) {
            const double u = (x + 0.5) / s * 2.0 - 1.0;
            const double r = std::hypot(u / rx, v / ry);
            const double head = sigmoid((1.0 - r) / kEdge);
            const double inner = sigmoid((1.0 - geom.cortical_thickness - r) / kEdge);
            const double vent = sigmoid((vr - std::hypot(u / kVentricleAspect, v)) / kEdge);
            double value = head * (kGray + (kWhite - kGray) * inner);
            value = value * (1.0 - vent) + kVentricle * vent * head;
            img(y, x) = value;
        }
    }
    if (opt.noise_std > 0.0) {
        for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] += noise(rng);
    }
    return img.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

PhantomGeometry phantom_geometry(double age, double age_min, double age_max) {
    const double a = std::clamp((age - age_min) / (age_max - age_min), 0.0, 1.0);
    return {0.08 + 0.17 * a, 0.16 - 0.07 * a};
}

std::vector<SynthSubject> synth_generate(const SynthOptions& opt) {
    if (opt.n < 0 || opt.n_test < 0) throw ConfigError("subject counts must be non-negative");
    if (!(opt.age_max > opt.age_min)) throw ConfigError("age range must satisfy min < max");
    if (opt.unlabeled_fraction < 0.0 || opt.unlabeled_fraction >= 1.0) throw ConfigError("unlabeled fraction must be in [0, 1)");
    if (opt.image_size < 4) throw ConfigError("image size must be at least 4");
    if (opt.noise_std < 0.0) throw ConfigError("noise std must be non-negative");

    std::vector<SynthSubject> out;
    out.reserve(static_cast<std::size_t>(opt.n + opt.n_test));
    auto make = [&](int index, const char* prefix, int serial, Cohort cohort) {
        std::mt19937_64 rng(mix_seed(opt.seed, static_cast<std::uint64_t>(index)));
        SynthSubject s;
        s.true_age = std::uniform_real_distribution<double>(opt.age_min, opt.age_max)(rng);
        s.image = render_phantom(s.true_age, opt, rng);
        s.record.id = padded_id(prefix, serial, prefix[0] == 't' ? 4 : 5);
        s.record.image_path = std::filesystem::path("images") / (s.record.id + ".png");
        s.record.age_years = s.true_age;
        s.record.cohort = cohort;
        out.push_back(std::move(s));
    };
    for (int i = 0; i < opt.n; ++i) make(i, "synth", i + 1, Cohort::train);
    for (int i = 0; i < opt.n_test; ++i) make(opt.n + i, "test", i + 1, Cohort::test);

    const auto n_unlabeled = static_cast<std::size_t>(std::lround(opt.unlabeled_fraction * opt.n));
    std::vector<std::size_t> order(static_cast<std::size_t>(opt.n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 pick(mix_seed(opt.seed, 0xA11ABE1ULL));
    std::shuffle(order.begin(), order.end(), pick);
    for (std::size_t k = 0; k < n_unlabeled; ++k) out[order[k]].record.age_years.reset();
    return out;
}

std::vector<std::filesystem::path> write_synth_dataset(const std::filesystem::path& out_dir,
                                                       const std::vector<SynthSubject>& subjects) {
    std::filesystem::create_directories(out_dir / "images");
    std::vector<std::filesystem::path> written;
    std::vector<SampleRecord> records;
    for (const auto& s : subjects) {
        const auto path = out_dir / s.record.image_path;
        write_png16(path, s.image);
        written.push_back(path);
        records.push_back(s.record);
    }
    write_manifest(out_dir / "manifest.csv", records);
    written.push_back(out_dir / "manifest.csv");

    std::ofstream truth(out_dir / "truth.csv");
    if (!truth) throw DataError("cannot write " + (out_dir / "truth.csv").string());
    truth << "id,true_age\n";
    truth.precision(12);
    for (const auto& s : subjects) truth << s.record.id << ',' << s.true_age << '\n';
    written.push_back(out_dir / "truth.csv");
    return written;
}

}  // namespace diffage::data
