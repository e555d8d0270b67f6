// SPDX-License-Identifier: Apache-2.0
#include "diffage/cli.hpp"

#include "diffage/checkpoint.hpp"
#include "diffage/data.hpp"
#include "diffage/diffusion.hpp"
#include "diffage/evaluation.hpp"
#include "diffage/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace diffage::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string out;
    std::uint64_t seed = kDefaultSeed;
};

fs::path output_dir(const Common& common, const std::string& command) {
    if (!common.out.empty()) return common.out;
    if (const char* root = std::getenv(kOutputEnv); root && *root) return fs::path(root) / command;
    return fs::path("diffage_out") / command;
}

fs::path write_provenance(const fs::path& dir, const std::string& command, std::uint64_t seed, const json& config) {
    fs::create_directories(dir);
    json prov;
    prov["command"] = command;
    prov["code_version"] = code_version();
    prov["seed"] = seed;
    prov["config"] = config;
    const auto path = dir / "provenance.json";
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << prov.dump(2) << '\n';
    return path;
}

template <typename T>
struct BundleScalar;
template <typename S>
struct BundleScalar<ModelBundle<S>> {
    using type = S;
};

fs::path model_prefix(const fs::path& p) {
    if (fs::is_directory(p)) return p / "model";
    return p;
}

/// Calls `f` with the checkpoint's bundle at its stored precision.
template <typename F>
void with_model(const fs::path& path, F&& f) {
    const auto prefix = model_prefix(path);
    std::ifstream in(checkpoint_paths(prefix).metadata);
    if (!in) throw DataError("cannot open model metadata " + checkpoint_paths(prefix).metadata.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw DataError(checkpoint_paths(prefix).metadata.string() + ": " + e.what());
    }
    if (meta.value("scalar", std::string("float32")) == "float64") {
        auto ck = load_checkpoint<double>(prefix);
        f(ck.bundle);
    } else {
        auto ck = load_checkpoint<float>(prefix);
        f(ck.bundle);
    }
}

std::vector<data::SampleRecord> select_records(const data::Manifest& manifest, const std::string& cohort,
                                               const std::vector<std::string>& ids) {
    std::vector<data::SampleRecord> out;
    if (!ids.empty()) {
        std::vector<std::string> unknown;
        for (const auto& id : ids) {
            if (const auto* r = manifest.find(id)) {
                out.push_back(*r);
            } else {
                unknown.push_back(id);
            }
        }
        if (!unknown.empty()) {
            std::string msg = "ids not in manifest:";
            for (const auto& id : unknown) msg += " " + id;
            throw DataError(msg);
        }
        return out;
    }
    if (cohort == "all") return manifest.records;
    return manifest.cohort(data::parse_cohort(cohort));
}

template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<data::Image>& images, int size) {
    Tensor<Scalar> x(static_cast<Index>(images.size()), 1, size, size);
    for (std::size_t i = 0; i < images.size(); ++i) {
        x.sample_matrix(static_cast<Index>(i)).row(0) =
            Eigen::Map<const Eigen::RowVectorXd>(images[i].data(), images[i].size()).template cast<Scalar>();
    }
    return x;
}

template <typename Scalar>
data::Image sample_image(const Tensor<Scalar>& x, Index i) {
    data::Image img(x.h(), x.w());
    Eigen::Map<Eigen::RowVectorXd>(img.data(), img.size()) = x.sample_matrix(i).row(0).template cast<double>();
    return img;
}

// ---------------------------------------------------------------- synth-data

struct SynthArgs {
    Common common{{}, 7};
    data::SynthOptions options;
};

CommandResult cmd_synth(const SynthArgs& a) {
    auto opt = a.options;
    opt.seed = a.common.seed;
    const auto dir = output_dir(a.common, "synth-data");
    const auto subjects = data::synth_generate(opt);
    CommandResult res;
    res.artifacts = data::write_synth_dataset(dir, subjects);
    const json config = {{"n", opt.n},
                         {"n_test", opt.n_test},
                         {"age_min", opt.age_min},
                         {"age_max", opt.age_max},
                         {"image_size", opt.image_size},
                         {"unlabeled_fraction", opt.unlabeled_fraction},
                         {"noise_std", opt.noise_std}};
    res.artifacts.push_back(write_provenance(dir, "synth-data", opt.seed, config));
    std::size_t unlabeled = 0;
    for (const auto& s : subjects)
        if (!s.record.age_years) ++unlabeled;
    res.summary = "wrote " + std::to_string(subjects.size()) + " phantoms (" + std::to_string(unlabeled) + " unlabeled) to " +
                  dir.string();
    return res;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
    Common common;
    std::string manifest;
    int size = data::kSliceSize;
    int slices = 1;
};

CommandResult cmd_preprocess(const PreprocessArgs& a) {
    const auto manifest = data::load_manifest(a.manifest);
    const auto dir = output_dir(a.common, "preprocess");
    fs::create_directories(dir / "images");
    CommandResult res;
    std::vector<data::SampleRecord> out_records;
    std::vector<std::string> warnings;
    for (const auto& r : manifest.records) {
        const auto path = manifest.resolve(r);
        const auto name = path.filename().string();
        std::vector<std::pair<data::Image, int>> slices;
        if (name.ends_with(".nii") || name.ends_with(".nii.gz")) {
            const auto volume = data::read_nifti(path);
            const auto depth = volume.dims[volume.axial_axis];
            const auto first = std::clamp<Eigen::Index>(data::medial_index(depth) - a.slices / 2, 0, depth - a.slices);
            auto extracted = data::extract_medial_slices(volume, a.slices);
            for (int s = 0; s < a.slices; ++s) slices.emplace_back(std::move(extracted[s]), int(first + s));
        } else {
            slices.emplace_back(data::read_png(path), 0);
        }
        for (const auto& [slice, index] : slices) {
            auto img = data::normalize_and_resize(slice, a.size);
            img.source_id = r.id;
            img.slice_index = index;
            if (img.degenerate) warnings.push_back(r.id + " slice " + std::to_string(index) + " is constant; wrote zeros");
            auto rec = r;
            if (slices.size() > 1) rec.id = r.id + "_s" + std::to_string(index);
            rec.image_path = fs::path("images") / (rec.id + ".png");
            data::write_png16(dir / rec.image_path, img.pixels);
            res.artifacts.push_back(dir / rec.image_path);
            out_records.push_back(std::move(rec));
        }
    }
    data::write_manifest(dir / "manifest.csv", out_records);
    res.artifacts.push_back(dir / "manifest.csv");
    res.artifacts.push_back(write_provenance(dir, "preprocess", a.common.seed,
                                             {{"manifest", a.manifest}, {"size", a.size}, {"slices", a.slices}}));
    res.summary = "preprocessed " + std::to_string(manifest.records.size()) + " records into " +
                  std::to_string(out_records.size()) + " slices";
    for (const auto& w : warnings) res.summary += "\nwarning: " + w;
    return res;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    Common common;
    std::string manifest;
    std::string config_file;
    std::string resume;
    std::map<std::string, std::string> overrides;
    std::vector<std::string> sets;
    int log_every = 100;
};

template <typename Scalar>
CommandResult train_as(const TrainArgs& a, const TrainConfig& cfg, const data::Manifest& manifest, const fs::path& dir) {
    const auto model_cfg = model_config_for_preset(cfg.preset);
    const int size = model_cfg.unet.image_size;
    const auto records = manifest.cohort(data::Cohort::train);
    if (records.empty()) throw DataError("manifest has no train records");
    const auto images = data::load_images(manifest, records, size);
    TrainingData<Scalar> train;
    train.image_size = size;
    for (std::size_t i = 0; i < records.size(); ++i) {
        train.ids.push_back(records[i].id);
        train.images.push_back(Eigen::Map<const Eigen::ArrayXd>(images[i].data(), images[i].size()).template cast<Scalar>());
        train.ages.push_back(records[i].age_years);
    }
    FitOptions options;
    options.out_dir = dir;
    if (!a.resume.empty()) options.resume_from = model_prefix(a.resume);
    options.provenance = {{"command", "train"}, {"manifest", a.manifest}};
    const int every = a.log_every;
    options.on_step = [every](const LogRow& row) {
        if (every > 0 && row.step % every == 0) std::cerr << "step " << format_log_row(row) << '\n';
    };
    const auto result = fit(train, cfg, options);
    CommandResult res;
    const auto paths = checkpoint_paths(dir / "model");
    res.artifacts = {paths.weights, paths.metadata, dir / "metrics.csv"};
    std::ostringstream os;
    os << "trained " << result.steps_completed << " steps on " << train.size() << " images (" << cfg.preset << ", "
       << cfg.precision << ")";
    if (!result.log.empty()) os << "; final loss " << format_log_row(result.log.back());
    res.summary = os.str();
    return res;
}

CommandResult cmd_train(const TrainArgs& a) {
    std::map<std::string, std::string> values;
    if (!a.config_file.empty()) values = read_key_values(a.config_file);
    for (const auto& [k, v] : a.overrides) values[k] = v;
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        values[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    TrainConfig cfg;
    cfg.apply(values);
    cfg.validate();
    const auto manifest = data::load_manifest(a.manifest);
    const auto dir = output_dir(a.common, "train");
    fs::create_directories(dir);
    write_key_values(dir / "train_config.txt", cfg.to_map());
    json config(cfg.to_map());
    config["manifest"] = a.manifest;
    const auto prov = write_provenance(dir, "train", cfg.seed, config);
    auto res = cfg.precision == "float64" ? train_as<double>(a, cfg, manifest, dir) : train_as<float>(a, cfg, manifest, dir);
    res.artifacts.push_back(dir / "train_config.txt");
    res.artifacts.push_back(prov);
    return res;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    Common common;
    std::string model;
    std::string manifest;
    std::string cohort = "test";
    std::vector<std::string> ids;
};

CommandResult cmd_predict(const PredictArgs& a) {
    const auto manifest = data::load_manifest(a.manifest);
    const auto records = select_records(manifest, a.cohort, a.ids);
    if (records.empty()) throw DataError("no records selected for prediction");
    const auto dir = output_dir(a.common, "predict");
    fs::create_directories(dir);
    std::vector<eval::ExternalPrediction> rows;
    with_model(a.model, [&](auto& bundle) {
        const auto images = data::load_images(manifest, records, bundle.config.unet.image_size);
        const auto ages = eval::predict_ages(bundle, images);
        for (std::size_t i = 0; i < records.size(); ++i) rows.push_back({records[i].id, ages[i]});
    });
    CommandResult res;
    eval::write_predictions(dir / "predictions.csv", rows);
    res.artifacts.push_back(dir / "predictions.csv");
    res.artifacts.push_back(write_provenance(dir, "predict", a.common.seed,
                                             {{"model", a.model}, {"manifest", a.manifest}, {"cohort", a.cohort}}));
    res.summary = "predicted ages for " + std::to_string(rows.size()) + " records";
    return res;
}

// ---------------------------------------------------------------- evaluate / stats

struct EvaluateArgs {
    Common common;
    std::string model;
    std::string manifest;
    std::string cohort = "test";
    std::string reference;
    std::string reference_label;
    bool bias_correct = false;
};

void attach_reference(eval::EvalReport& report, const std::string& reference, const std::string& label) {
    if (reference.empty()) return;
    const auto name = label.empty() ? fs::path(reference).stem().string() : label;
    report.ks = eval::compare_pads(report, eval::read_predictions(reference), name);
}

CommandResult finish_report(const eval::EvalReport& report, const fs::path& dir, const std::string& command,
                            std::uint64_t seed, const json& config) {
    CommandResult res;
    res.artifacts = eval::write_report(dir, report);
    res.artifacts.push_back(write_provenance(dir, command, seed, config));
    res.summary = eval::render_summary(report);
    if (!res.summary.empty() && res.summary.back() == '\n') res.summary.pop_back();
    return res;
}

CommandResult cmd_evaluate(const EvaluateArgs& a) {
    const auto manifest = data::load_manifest(a.manifest);
    const auto cohort = data::parse_cohort(a.cohort);
    eval::EvalReport report;
    eval::ReportOptions options;
    options.bias_correct = a.bias_correct;
    with_model(a.model, [&](auto& bundle) { report = eval::evaluate(bundle, manifest, cohort, options); });
    attach_reference(report, a.reference, a.reference_label);
    return finish_report(report, output_dir(a.common, "evaluate"), "evaluate", a.common.seed,
                         {{"model", a.model},
                          {"manifest", a.manifest},
                          {"cohort", a.cohort},
                          {"reference", a.reference},
                          {"bias_correct", a.bias_correct}});
}

struct StatsArgs {
    Common common;
    std::string table;
    std::string cohort = "table";
    std::string reference;
    std::string reference_label;
    bool bias_correct = false;
};

CommandResult cmd_stats(const StatsArgs& a) {
    std::ifstream in(a.table);
    if (!in) throw DataError("cannot open table " + a.table);
    std::stringstream buf;
    buf << in.rdbuf();
    auto rows = eval::parse_table(buf.str());
    eval::ReportOptions options;
    options.bias_correct = a.bias_correct;
    auto report = eval::build_report(a.cohort, std::move(rows), options);
    attach_reference(report, a.reference, a.reference_label);
    return finish_report(report, output_dir(a.common, "stats"), "stats", a.common.seed,
                         {{"table", a.table}, {"cohort", a.cohort}, {"reference", a.reference}, {"bias_correct", a.bias_correct}});
}

// ---------------------------------------------------------------- reconstruct

struct ReconstructArgs {
    Common common;
    std::string model;
    std::string manifest;
    std::string cohort = "test";
    std::vector<std::string> ids;
    int limit = 0;
    int steps = 50;
    double eta = 0.0;
};

CommandResult cmd_reconstruct(const ReconstructArgs& a) {
    const auto manifest = data::load_manifest(a.manifest);
    auto records = select_records(manifest, a.cohort, a.ids);
    if (a.limit > 0 && records.size() > std::size_t(a.limit)) records.resize(std::size_t(a.limit));
    if (records.empty()) throw DataError("no records selected for reconstruction");
    const auto dir = output_dir(a.common, "reconstruct");
    fs::create_directories(dir / "images");
    CommandResult res;
    double total = 0.0;
    std::ofstream table(dir / "reconstruction.csv");
    table << "id,mean_abs_error\n";
    with_model(a.model, [&](auto& bundle) {
        using Scalar = typename BundleScalar<std::decay_t<decltype(bundle)>>::type;
        const int size = bundle.config.unet.image_size;
        const auto cfg = ReverseStepConfig::evenly_spaced(bundle.schedule.num_steps, a.steps, a.eta);
        const auto images = data::load_images(manifest, records, size);
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto x0 = stack_images<Scalar>({images[i]}, size);
            const auto rec = reconstruct(bundle, x0, cfg, mix_seed(a.common.seed, i));
            const auto img = sample_image(rec, 0);
            const double err = (img - images[i]).abs().mean();
            total += err;
            const auto path = dir / "images" / (records[i].id + "_recon.png");
            data::write_png16(path, img);
            res.artifacts.push_back(path);
            table << records[i].id << ',' << eval::exact_number(err) << '\n';
        }
    });
    res.artifacts.push_back(dir / "reconstruction.csv");
    res.artifacts.push_back(write_provenance(
        dir, "reconstruct", a.common.seed,
        {{"model", a.model}, {"manifest", a.manifest}, {"steps", a.steps}, {"eta", a.eta}, {"records", records.size()}}));
    res.summary = "reconstructed " + std::to_string(records.size()) + " images; mean absolute pixel error " +
                  eval::exact_number(total / double(records.size()));
    return res;
}

// ---------------------------------------------------------------- interpolate

struct InterpolateArgs {
    Common common;
    std::string model;
    std::string manifest;
    std::string a;
    std::string b;
    int steps = 5;
    int inference_steps = 50;
    bool images = true;
};

CommandResult cmd_interpolate(const InterpolateArgs& a) {
    if (a.steps < 2) throw ConfigError("--steps must be at least 2");
    const auto manifest = data::load_manifest(a.manifest);
    const auto records = select_records(manifest, "all", {a.a, a.b});
    const auto dir = output_dir(a.common, "interpolate");
    fs::create_directories(dir / "images");
    CommandResult res;
    std::vector<double> lambdas, ages;
    for (int k = 0; k < a.steps; ++k) lambdas.push_back(double(k) / double(a.steps - 1));
    with_model(a.model, [&](auto& bundle) {
        using Scalar = typename BundleScalar<std::decay_t<decltype(bundle)>>::type;
        const int size = bundle.config.unet.image_size;
        const auto x = stack_images<Scalar>(data::load_images(manifest, records, size), size);
        const auto z = semantic_encode(bundle, x);
        Tensor<Scalar> path_z(a.steps, z.c());
        for (int k = 0; k < a.steps; ++k) {
            path_z.matrix().row(k) = interpolate_latents(z.matrix().row(0), z.matrix().row(1), lambdas[std::size_t(k)]);
        }
        const auto predicted = age_predict(bundle, path_z);
        for (int k = 0; k < a.steps; ++k) ages.push_back(double(predicted[k]));
        if (!a.images) return;
        const auto cfg = ReverseStepConfig::evenly_spaced(bundle.schedule.num_steps, a.inference_steps, 0.0);
        std::mt19937_64 rng(a.common.seed);
        Tensor<Scalar> first(1, 1, size, size);
        first.data = x.data.head(first.size());
        const auto x_T = encode_stochastic(first, bundle.schedule, cfg, rng);
        const auto model = as_noise_model(bundle);
        for (int k = 0; k < a.steps; ++k) {
            Tensor<Scalar> zk(1, z.c());
            zk.data = path_z.matrix().row(k).transpose();
            const auto out = decode(x_T, zk, model, bundle.schedule, cfg, rng);
            const auto file = dir / "images" / ("interp_" + std::to_string(k) + ".png");
            data::write_png16(file, sample_image(out, 0));
            res.artifacts.push_back(file);
        }
    });
    std::ofstream table(dir / "interpolation.csv");
    table << "index,lambda,predicted_age\n";
    for (int k = 0; k < a.steps; ++k) {
        table << k << ',' << eval::exact_number(lambdas[std::size_t(k)]) << ',' << eval::exact_number(ages[std::size_t(k)]) << '\n';
    }
    table.close();
    res.artifacts.push_back(dir / "interpolation.csv");
    res.artifacts.push_back(write_provenance(dir, "interpolate", a.common.seed,
                                             {{"model", a.model},
                                              {"manifest", a.manifest},
                                              {"a", a.a},
                                              {"b", a.b},
                                              {"steps", a.steps},
                                              {"inference_steps", a.inference_steps}}));
    std::ostringstream os;
    os << "predicted ages along " << a.a << " -> " << a.b << ":";
    os << std::fixed << std::setprecision(2);
    for (double v : ages) os << ' ' << v;
    res.summary = os.str();
    return res;
}

void add_common(CLI::App* sub, Common& c, bool seed = true) {
    sub->add_option("--out", c.out, "output directory (default: $DIFFAGE_OUT/<command> or diffage_out/<command>)");
    if (seed) sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
}

}  // namespace

CommandResult run(const std::vector<std::string>& args) {
    CLI::App app{"Semi-supervised diffusion autoencoder for brain age estimation", "diffage"};
    app.require_subcommand(1);
    app.set_version_flag("--version", code_version());

    SynthArgs synth;
    auto* s = app.add_subcommand("synth-data", "generate aging phantoms with a manifest");
    add_common(s, synth.common);
    s->add_option("--n", synth.options.n, "training phantoms")->capture_default_str();
    s->add_option("--n-test", synth.options.n_test, "extra held-out phantoms (test cohort)")->capture_default_str();
    s->add_option("--age-min", synth.options.age_min)->capture_default_str();
    s->add_option("--age-max", synth.options.age_max)->capture_default_str();
    s->add_option("--image-size", synth.options.image_size)->capture_default_str();
    s->add_option("--unlabeled-fraction", synth.options.unlabeled_fraction)->capture_default_str();
    s->add_option("--noise-std", synth.options.noise_std)->capture_default_str();

    PreprocessArgs pre;
    auto* p = app.add_subcommand("preprocess", "extract, resize and normalize slices");
    add_common(p, pre.common, false);
    p->add_option("--manifest", pre.manifest, "input manifest")->required();
    p->add_option("--size", pre.size, "output side length")->capture_default_str();
    p->add_option("--slices", pre.slices, "medial slices per volume")->capture_default_str()->check(CLI::PositiveNumber);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "train the model on the manifest's train cohort");
    add_common(t, train.common, false);
    t->add_option("--manifest", train.manifest, "input manifest")->required();
    t->add_option("--config", train.config_file, "key = value config file");
    t->add_option("--resume", train.resume, "checkpoint prefix to resume from");
    t->add_option("--set", train.sets, "key=value override (repeatable)");
    t->add_option("--log-every", train.log_every, "progress interval in steps (0 silences)")->capture_default_str();
    const auto keys = TrainConfig().to_map();
    for (const auto& [key, value] : keys) {
        std::string dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        std::string names = "--" + key;
        if (dashed != key) names += ",--" + dashed;
        if (key == "max_steps") names += ",--steps";
        t->add_option_function<std::string>(
            names, [&train, key = key](const std::string& v) { train.overrides[key] = v; }, "default " + value);
    }

    PredictArgs pred;
    auto* pr = app.add_subcommand("predict", "predict ages for manifest records");
    add_common(pr, pred.common, false);
    pr->add_option("--model", pred.model, "model prefix or training directory")->required();
    pr->add_option("--manifest", pred.manifest)->required();
    pr->add_option("--cohort", pred.cohort, "train, test, patient or all")->capture_default_str();
    pr->add_option("--ids", pred.ids, "explicit record ids")->delimiter(',');

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "metrics and report for a cohort");
    add_common(e, ev.common, false);
    e->add_option("--model", ev.model)->required();
    e->add_option("--manifest", ev.manifest)->required();
    e->add_option("--cohort", ev.cohort)->capture_default_str();
    e->add_option("--reference", ev.reference, "predictions CSV (id,predicted_age) of another model for KS");
    e->add_option("--reference-label", ev.reference_label);
    e->add_flag("--bias-correct", ev.bias_correct, "regress PAD on age before reporting");

    StatsArgs st;
    auto* sa = app.add_subcommand("stats", "metrics and report from a per-record table");
    add_common(sa, st.common, false);
    sa->add_option("--table", st.table, "table.csv from evaluate")->required();
    sa->add_option("--cohort", st.cohort, "label for the report")->capture_default_str();
    sa->add_option("--reference", st.reference);
    sa->add_option("--reference-label", st.reference_label);
    sa->add_flag("--bias-correct", st.bias_correct);

    ReconstructArgs rc;
    auto* r = app.add_subcommand("reconstruct", "encode and decode images");
    add_common(r, rc.common);
    r->add_option("--model", rc.model)->required();
    r->add_option("--manifest", rc.manifest)->required();
    r->add_option("--cohort", rc.cohort)->capture_default_str();
    r->add_option("--ids", rc.ids)->delimiter(',');
    r->add_option("--limit", rc.limit, "maximum records (0 = all)")->capture_default_str();
    r->add_option("--steps", rc.steps, "inference steps")->capture_default_str();
    r->add_option("--eta", rc.eta)->capture_default_str();

    InterpolateArgs in;
    auto* ip = app.add_subcommand("interpolate", "walk the semantic latent between two subjects");
    add_common(ip, in.common);
    ip->add_option("--model", in.model)->required();
    ip->add_option("--manifest", in.manifest)->required();
    ip->add_option("--a", in.a, "start record id")->required();
    ip->add_option("--b", in.b, "end record id")->required();
    ip->add_option("--steps", in.steps, "points along the path, endpoints included")->capture_default_str();
    ip->add_option("--inference-steps", in.inference_steps)->capture_default_str();
    ip->add_flag("!--no-images", in.images, "skip decoding");

    std::vector<std::string> argv{"diffage"};
    argv.insert(argv.end(), args.begin(), args.end());
    std::vector<char*> raw;
    for (auto& a : argv) raw.push_back(a.data());

    CommandResult res;
    try {
        app.parse(static_cast<int>(raw.size()), raw.data());
    } catch (const CLI::ParseError& err) {
        std::ostringstream out, errs;
        res.exit_code = app.exit(err, out, errs) == 0 ? 0 : 1;
        res.summary = out.str() + errs.str();
        if (res.exit_code != 0) res.summary += app.help();
        return res;
    }

    try {
        if (s->parsed()) return cmd_synth(synth);
        if (p->parsed()) return cmd_preprocess(pre);
        if (t->parsed()) return cmd_train(train);
        if (pr->parsed()) return cmd_predict(pred);
        if (e->parsed()) return cmd_evaluate(ev);
        if (sa->parsed()) return cmd_stats(st);
        if (r->parsed()) return cmd_reconstruct(rc);
        if (ip->parsed()) return cmd_interpolate(in);
    } catch (const ConfigError& err) {
        return {1, {}, std::string("invalid configuration: ") + err.what()};
    } catch (const DataError& err) {
        return {1, {}, std::string("invalid input: ") + err.what()};
    } catch (const std::exception& err) {
        return {2, {}, std::string("failed: ") + err.what()};
    }
    return {1, {}, app.help()};
}

}  // namespace diffage::cli
