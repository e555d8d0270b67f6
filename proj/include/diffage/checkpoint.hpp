// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/networks.hpp"
#include "diffage/optimizer.hpp"
#include "diffage/train_config.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <type_traits>

namespace diffage {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr char kArchiveMagic[8] = {'D', 'I', 'F', 'F', 'A', 'G', 'E', '\0'};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
std::string code_version();

struct CheckpointPaths {
    std::filesystem::path weights;
    std::filesystem::path metadata;
};

/// `<prefix>.bin` and `<prefix>.json`; a trailing .bin/.json on the prefix is ignored.
inline CheckpointPaths checkpoint_paths(std::filesystem::path prefix) {
    if (prefix.extension() == ".bin" || prefix.extension() == ".json") prefix.replace_extension();
    auto weights = prefix, metadata = prefix;
    weights += ".bin";
    metadata += ".json";
    return {weights, metadata};
}

template <typename Scalar>
const char* scalar_name() {
    return std::is_same_v<Scalar, float> ? "float32" : "float64";
}

/// Flat named-tensor archive: magic, version, scalar width, then entries of
/// (name length, name, 4 x int64 shape, raw little-endian values).
template <typename Scalar>
void write_archive(const std::filesystem::path& path, const std::vector<std::pair<std::string, Tensor<Scalar>>>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    const std::uint32_t version = kCheckpointFormatVersion, width = sizeof(Scalar);
    const std::uint64_t count = entries.size();
    out.write(kArchiveMagic, sizeof kArchiveMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&width), sizeof width);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (const auto& [name, t] : entries) {
        const std::uint32_t len = static_cast<std::uint32_t>(name.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(name.data(), len);
        for (Index d : t.shape) {
            const std::int64_t dim = d;
            out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
        }
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
    }
    if (!out) throw DataError("write failed for " + path.string());
}

template <typename Stored, typename Scalar>
void read_entries(std::ifstream& in, std::uint64_t count, const std::filesystem::path& path,
                  std::map<std::string, Tensor<Scalar>>& out) {
    for (std::uint64_t e = 0; e < count; ++e) {
        std::uint32_t len = 0;
        in.read(reinterpret_cast<char*>(&len), sizeof len);
        std::string name(len, '\0');
        in.read(name.data(), len);
        std::array<Index, 4> shape{};
        for (auto& d : shape) {
            std::int64_t dim = 0;
            in.read(reinterpret_cast<char*>(&dim), sizeof dim);
            d = dim;
        }
        Tensor<Stored> t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(Stored)));
        if (!in) throw DataError(path.string() + ": truncated archive at entry '" + name + "'");
        out.emplace(std::move(name), t.template cast<Scalar>());
    }
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    char magic[8];
    std::uint32_t version = 0, width = 0;
    std::uint64_t count = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&width), sizeof width);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || std::memcmp(magic, kArchiveMagic, sizeof magic) != 0) throw DataError(path.string() + ": not a weight archive");
    if (version != kCheckpointFormatVersion) throw DataError(path.string() + ": unsupported archive version");
    std::map<std::string, Tensor<Scalar>> out;
    if (width == 4) {
        read_entries<float>(in, count, path, out);
    } else if (width == 8) {
        read_entries<double>(in, count, path, out);
    } else {
        throw DataError(path.string() + ": unsupported scalar width");
    }
    return out;
}

/// Everything needed to resume training or run inference.
template <typename Scalar>
struct Checkpoint {
    ModelBundle<Scalar> bundle;
    TrainConfig train;
    int step = 0;
    std::optional<Adam<Scalar>> optimizer;
    std::map<std::string, Tensor<Scalar>> ema;
    nlohmann::json metadata;
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& prefix, ModelBundle<Scalar>& bundle, const TrainConfig& train, int step,
                     const Adam<Scalar>* optimizer, const std::map<std::string, Tensor<Scalar>>* ema,
                     const nlohmann::json& provenance = {}) {
    const auto paths = checkpoint_paths(prefix);
    if (paths.weights.has_parent_path()) std::filesystem::create_directories(paths.weights.parent_path());
    std::vector<std::pair<std::string, Tensor<Scalar>>> entries;
    const auto params = bundle.params();
    for (const auto& p : params) entries.emplace_back("param." + p.name, p.var.value());
    for (const auto& b : bundle.buffers()) {
        Tensor<Scalar> t(1, b.data->size());
        t.data = *b.data;
        entries.emplace_back("buffer." + b.name, std::move(t));
    }
    nlohmann::json optimizer_steps = nlohmann::json::object();
    if (optimizer && !optimizer->slots().empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& slot = optimizer->slots()[i];
            entries.emplace_back("adam.m." + params[i].name, slot.m);
            entries.emplace_back("adam.v." + params[i].name, slot.v);
            optimizer_steps[params[i].name] = slot.steps;
        }
    }
    if (ema) {
        for (const auto& [name, t] : *ema) entries.emplace_back("ema." + name, t);
    }
    write_archive(paths.weights, entries);

    const auto counts = count_parameters(bundle);
    nlohmann::json meta;
    meta["format_version"] = kCheckpointFormatVersion;
    meta["scalar"] = scalar_name<Scalar>();
    meta["model"] = model_config_to_json(bundle.config);
    meta["schedule"] = {{"family", "linear"},
                        {"num_steps", bundle.schedule.num_steps},
                        {"beta_start", bundle.schedule.betas[0]},
                        {"beta_end", bundle.schedule.betas[bundle.schedule.num_steps - 1]}};
    meta["age_normalization"] = {{"mean", bundle.age_head.age_mean}, {"std", bundle.age_head.age_std}};
    meta["training"] = {{"step", step}, {"config", train.to_map()}, {"optimizer_steps", optimizer_steps}};
    meta["parameter_counts"] = {{"noise_predictor", counts.noise_predictor},
                                {"semantic_encoder", counts.semantic_encoder},
                                {"age_head", counts.age_head},
                                {"total", counts.total()}};
    meta["provenance"] = provenance;
    meta["provenance"]["code_version"] = code_version();
    std::ofstream out(paths.metadata);
    if (!out) throw DataError("cannot write " + paths.metadata.string());
    out << meta.dump(2) << '\n';
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& prefix) {
    const auto paths = checkpoint_paths(prefix);
    std::ifstream meta_in(paths.metadata);
    if (!meta_in) throw DataError("cannot open checkpoint metadata " + paths.metadata.string());
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(paths.metadata.string() + ": " + e.what());
    }
    if (meta.value("format_version", 0) != kCheckpointFormatVersion) {
        throw DataError(paths.metadata.string() + ": unsupported checkpoint format version");
    }

    Checkpoint<Scalar> ck;
    ck.metadata = meta;
    const auto& sched = meta.at("schedule");
    const auto schedule = make_linear_schedule(sched.at("num_steps").get<int>(), sched.at("beta_start").get<double>(),
                                               sched.at("beta_end").get<double>());
    ck.bundle = ModelBundle<Scalar>(model_config_from_json(meta.at("model")), schedule, 0);
    ck.bundle.age_head.age_mean = meta.at("age_normalization").at("mean").get<double>();
    ck.bundle.age_head.age_std = meta.at("age_normalization").at("std").get<double>();
    std::map<std::string, std::string> train_map;
    for (const auto& [k, v] : meta.at("training").at("config").items()) train_map[k] = v.template get<std::string>();
    ck.train.apply(train_map);
    ck.step = meta.at("training").at("step").get<int>();

    auto archive = read_archive<Scalar>(paths.weights);
    auto take = [&](const std::string& key, Tensor<Scalar>& dst) {
        const auto it = archive.find(key);
        if (it == archive.end()) throw DataError(paths.weights.string() + ": missing entry '" + key + "'");
        if (!it->second.same_shape(dst)) throw DataError(paths.weights.string() + ": shape mismatch for '" + key + "'");
        dst = std::move(it->second);
        archive.erase(it);
    };
    const auto params = ck.bundle.params();
    for (auto p : params) take("param." + p.name, p.var.mutable_value());
    for (auto& b : ck.bundle.buffers()) {
        Tensor<Scalar> t(1, b.data->size());
        take("buffer." + b.name, t);
        *b.data = t.data;
    }
    const auto& steps = meta.at("training").value("optimizer_steps", nlohmann::json::object());
    if (!steps.empty()) {
        Adam<Scalar> opt(ck.train.learning_rate, ck.train.adam_beta1, ck.train.adam_beta2, ck.train.adam_eps);
        opt.init(params);
        for (std::size_t i = 0; i < params.size(); ++i) {
            take("adam.m." + params[i].name, opt.slots()[i].m);
            take("adam.v." + params[i].name, opt.slots()[i].v);
            opt.slots()[i].steps = steps.at(params[i].name).template get<std::int64_t>();
        }
        ck.optimizer = std::move(opt);
    }
    for (auto it = archive.begin(); it != archive.end();) {
        if (it->first.rfind("ema.", 0) == 0) {
            ck.ema.emplace(it->first.substr(4), std::move(it->second));
            it = archive.erase(it);
        } else {
            ++it;
        }
    }
    if (!archive.empty()) throw DataError(paths.weights.string() + ": unexpected entry '" + archive.begin()->first + "'");
    return ck;
}

}  // namespace diffage
