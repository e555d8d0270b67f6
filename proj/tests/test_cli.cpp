#include "diffage/cli.hpp"
#include "diffage/checkpoint.hpp"
#include "diffage/evaluation.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace diffage;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "diffage_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

cli::CommandResult run(std::vector<std::string> args) { return cli::run(args); }

// Synthetic 8 px data plus a few steps of the tiny model, built once.
struct Fixture {
    fs::path data = root() / "data";
    fs::path model = root() / "model";

    Fixture() {
        if (fs::exists(model / "model.json")) return;
        REQUIRE(run({"synth-data", "--n", "24", "--n-test", "6", "--image-size", "8", "--out", data.string()}).exit_code == 0);
        const auto res = run({"train", "--manifest", (data / "manifest.csv").string(), "--preset", "tiny", "--steps", "6",
                              "--batch-size", "4", "--precision", "float64", "--out", model.string()});
        REQUIRE_MESSAGE(res.exit_code == 0, res.summary);
    }

    std::string manifest() const { return (data / "manifest.csv").string(); }
};

std::vector<std::pair<std::string, double>> read_csv_pairs(const fs::path& p, int key_col, int value_col) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<std::string, double>> out;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        out.emplace_back(f[std::size_t(key_col)], std::stod(f[std::size_t(value_col)]));
    }
    return out;
}

}  // namespace

TEST_CASE("synth-data is byte-identical across runs") {
    const auto a = root() / "synth_a", b = root() / "synth_b";
    for (const auto& dir : {a, b}) {
        const auto res = run({"synth-data", "--n", "100", "--seed", "7", "--image-size", "16", "--out", dir.string()});
        REQUIRE(res.exit_code == 0);
        CHECK(!res.artifacts.empty());
    }
    int compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a);
        CHECK_MESSAGE(slurp(entry.path()) == slurp(b / rel), rel.string());
        ++compared;
    }
    CHECK(compared >= 103);
    CHECK(fs::exists(a / "provenance.json"));
}

TEST_CASE("usage errors exit with code 1") {
    CHECK(run({}).exit_code == 1);
    CHECK(run({"transmogrify"}).exit_code == 1);
    const auto res = run({"synth-data", "--no-such-flag", "3"});
    CHECK(res.exit_code == 1);
    CHECK(!res.summary.empty());
    CHECK(run({"synth-data", "--help"}).exit_code == 0);
}

TEST_CASE("evaluate names test records without ages") {
    Fixture fx;
    const auto bad = root() / "no_ages.csv";
    {
        std::ofstream out(bad);
        out << data::kManifestHeader << '\n'
            << "t1," << (fx.data / "images" / "test_0001.png").string() << ",,test,\n"
            << "t2," << (fx.data / "images" / "test_0002.png").string() << ",44,test,\n"
            << "t3," << (fx.data / "images" / "test_0003.png").string() << ",,test,\n";
    }
    const auto res = run({"evaluate", "--model", fx.model.string(), "--manifest", bad.string(), "--out", (root() / "ev_bad").string()});
    CHECK(res.exit_code == 1);
    CHECK(res.summary.find("t1") != std::string::npos);
    CHECK(res.summary.find("t3") != std::string::npos);
    CHECK(res.summary.find("t2") == std::string::npos);
}

TEST_CASE("runtime failures exit with code 2") {
    Fixture fx;
    // An absurd step size overflows the weights, so training diverges.
    const auto dir = root() / "diverge";
    const auto res = run({"train", "--manifest", fx.manifest(), "--preset", "tiny", "--steps", "5", "--precision", "float64",
                          "--learning-rate", "1e200", "--out", dir.string()});
    CHECK(res.exit_code == 2);
    CHECK(res.summary.find("non-finite") != std::string::npos);
    CHECK(fs::exists(dir / "checkpoints" / "last_good.json"));
}

TEST_CASE("predict and evaluate match the module APIs byte for byte") {
    Fixture fx;
    const auto pred_dir = root() / "predict";
    REQUIRE(run({"predict", "--model", fx.model.string(), "--manifest", fx.manifest(), "--out", pred_dir.string()}).exit_code == 0);
    const auto ev_dir = root() / "evaluate";
    const auto ev = run({"evaluate", "--model", fx.model.string(), "--manifest", fx.manifest(), "--reference",
                         (pred_dir / "predictions.csv").string(), "--reference-label", "self", "--out", ev_dir.string()});
    REQUIRE_MESSAGE(ev.exit_code == 0, ev.summary);

    auto ck = load_checkpoint<double>(fx.model / "model");
    const auto manifest = data::load_manifest(fx.manifest());
    const auto records = manifest.cohort(data::Cohort::test);
    const auto ages = eval::predict_ages(ck.bundle, data::load_images(manifest, records, 8));
    std::vector<eval::ExternalPrediction> rows;
    for (std::size_t i = 0; i < records.size(); ++i) rows.push_back({records[i].id, ages[i]});
    const auto api_pred = root() / "api_predictions.csv";
    eval::write_predictions(api_pred, rows);
    CHECK(slurp(api_pred) == slurp(pred_dir / "predictions.csv"));

    auto report = eval::evaluate(ck.bundle, manifest, data::Cohort::test, {});
    report.ks = eval::compare_pads(report, eval::read_predictions(api_pred), "self");
    CHECK(eval::render_summary(report) == slurp(ev_dir / "summary.txt"));
    CHECK(eval::render_table(report) == slurp(ev_dir / "table.csv"));
    CHECK(report.ks->statistic == 0.0);

    const auto again = run({"evaluate", "--model", fx.model.string(), "--manifest", fx.manifest(), "--reference",
                            (pred_dir / "predictions.csv").string(), "--reference-label", "self", "--out",
                            (root() / "evaluate_again").string()});
    CHECK(slurp(root() / "evaluate_again" / "summary.txt") == slurp(ev_dir / "summary.txt"));
    CHECK(again.summary == ev.summary);

    const auto stats = run({"stats", "--table", (ev_dir / "table.csv").string(), "--cohort", "test", "--out", (root() / "stats").string()});
    REQUIRE(stats.exit_code == 0);
    auto without_ks = report;
    without_ks.ks.reset();
    CHECK(slurp(root() / "stats" / "summary.txt") == eval::render_summary(without_ks));
}

TEST_CASE("interpolation endpoints match the subjects' own predictions") {
    Fixture fx;
    const auto pred_dir = root() / "predict_ends";
    REQUIRE(run({"predict", "--model", fx.model.string(), "--manifest", fx.manifest(), "--ids", "test_0002", "--ids",
                 "test_0005", "--out", pred_dir.string()})
                .exit_code == 0);
    const auto dir = root() / "interp";
    const auto res = run({"interpolate", "--model", fx.model.string(), "--manifest", fx.manifest(), "--a", "test_0002", "--b",
                          "test_0005", "--steps", "7", "--inference-steps", "5", "--out", dir.string()});
    REQUIRE_MESSAGE(res.exit_code == 0, res.summary);
    const auto path = read_csv_pairs(dir / "interpolation.csv", 1, 2);
    REQUIRE(path.size() == 7);
    for (int k = 0; k < 7; ++k) CHECK(fs::exists(dir / "images" / ("interp_" + std::to_string(k) + ".png")));
    const auto ends = read_csv_pairs(pred_dir / "predictions.csv", 0, 1);
    REQUIRE(ends.size() == 2);
    CHECK(path.front().second == doctest::Approx(ends[0].second).epsilon(1e-9));
    CHECK(path.back().second == doctest::Approx(ends[1].second).epsilon(1e-9));
    CHECK(std::stod(path.front().first) == 0.0);
    CHECK(std::stod(path.back().first) == 1.0);
}

TEST_CASE("reconstruct writes images and per-record errors") {
    Fixture fx;
    const auto dir = root() / "recon";
    const auto res = run({"reconstruct", "--model", fx.model.string(), "--manifest", fx.manifest(), "--limit", "2", "--steps",
                          "4", "--out", dir.string()});
    REQUIRE_MESSAGE(res.exit_code == 0, res.summary);
    const auto rows = read_csv_pairs(dir / "reconstruction.csv", 0, 1);
    CHECK(rows.size() == 2);
    for (const auto& [id, err] : rows) {
        CHECK(err >= 0.0);
        CHECK(err <= 1.0);
        CHECK(fs::exists(dir / "images" / (id + "_recon.png")));
    }
}

TEST_CASE("flags override the config file and the effective config is written") {
    Fixture fx;
    const auto cfg = root() / "train.cfg";
    std::ofstream(cfg) << "batch_size = 2\nlearning_rate = 0.005\npreset = tiny\nmax_steps = 2\nprecision = float64\n";
    const auto dir = root() / "train_override";
    const auto res = run({"train", "--manifest", fx.manifest(), "--config", cfg.string(), "--batch-size", "3", "--out", dir.string()});
    REQUIRE_MESSAGE(res.exit_code == 0, res.summary);
    const auto effective = read_key_values(dir / "train_config.txt");
    CHECK(effective.at("batch_size") == "3");
    CHECK(std::stod(effective.at("learning_rate")) == 0.005);
    CHECK(effective.at("max_steps") == "2");
    CHECK(fs::exists(dir / "provenance.json"));
    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(run({"train", "--manifest", fx.manifest(), "--set", "bogus=1", "--out", dir.string()}).exit_code == 1);
}

TEST_CASE("default output directory honours the environment") {
    const auto base = root() / "env_out";
    ::setenv(cli::kOutputEnv, base.c_str(), 1);
    const auto res = run({"synth-data", "--n", "3", "--image-size", "8"});
    ::unsetenv(cli::kOutputEnv);
    REQUIRE(res.exit_code == 0);
    CHECK(fs::exists(base / "synth-data" / "manifest.csv"));
}
