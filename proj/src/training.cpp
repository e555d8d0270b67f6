// SPDX-License-Identifier: Apache-2.0
#include "diffage/training.hpp"

#ifndef DIFFAGE_VERSION
#define DIFFAGE_VERSION "unknown"
#endif

namespace diffage {

std::string code_version() { return DIFFAGE_VERSION; }

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    const auto& u = cfg.unet;
    return {{"image_size", u.image_size},
            {"in_channels", u.in_channels},
            {"base_channels", u.base_channels},
            {"channel_multipliers", u.channel_multipliers},
            {"convs_per_stage", u.convs_per_stage},
            {"attention_blocks", u.attention_blocks},
            {"norm_groups", u.norm_groups},
            {"time_embedding_dim", u.time_embedding_dim},
            {"latent_dim", u.latent_dim},
            {"age_hidden", cfg.age_head.hidden},
            {"age_dropout", cfg.age_head.dropout}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    auto& u = cfg.unet;
    u.image_size = j.at("image_size").get<int>();
    u.in_channels = j.at("in_channels").get<int>();
    u.base_channels = j.at("base_channels").get<int>();
    u.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    u.convs_per_stage = j.at("convs_per_stage").get<int>();
    u.attention_blocks = j.at("attention_blocks").get<int>();
    u.norm_groups = j.at("norm_groups").get<int>();
    u.time_embedding_dim = j.at("time_embedding_dim").get<int>();
    u.latent_dim = j.at("latent_dim").get<int>();
    cfg.age_head.hidden = j.at("age_hidden").get<std::vector<int>>();
    cfg.age_head.dropout = j.at("age_dropout").get<double>();
    cfg.validate();
    return cfg;
}

ModelConfig model_config_for_preset(const std::string& preset) {
    if (preset == "full") return ModelConfig::full();
    if (preset == "reduced") return ModelConfig::reduced();
    if (preset == "tiny") return ModelConfig::tiny();
    throw ConfigError("unknown preset: " + preset);
}

NoiseSchedule schedule_for(const TrainConfig& cfg) {
    return make_linear_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
}

namespace {

std::vector<std::vector<std::size_t>> chunk(std::vector<std::size_t> pool, int batch_size, std::mt19937_64& rng) {
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    if (pool.empty()) return batches;
    const std::size_t bs = static_cast<std::size_t>(batch_size);
    if (pool.size() < bs) {
        batches.push_back(std::move(pool));
        return batches;
    }
    for (std::size_t start = 0; start + bs <= pool.size(); start += bs) {
        batches.emplace_back(pool.begin() + std::ptrdiff_t(start), pool.begin() + std::ptrdiff_t(start + bs));
    }
    return batches;
}

}  // namespace

std::vector<std::vector<std::size_t>> plan_epoch(const std::vector<std::size_t>& labeled,
                                                 const std::vector<std::size_t>& unlabeled, const TrainConfig& cfg,
                                                 std::uint64_t epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xE0000000ULL + epoch));
    auto plan = chunk(labeled, cfg.batch_size, rng);
    auto extra = chunk(unlabeled, cfg.batch_size, rng);
    std::size_t keep = extra.size();
    if (!plan.empty()) {
        if (cfg.unlabeled_fraction < 1.0) {
            const double ratio = cfg.unlabeled_fraction / (1.0 - cfg.unlabeled_fraction);
            keep = std::min(keep, static_cast<std::size_t>(std::lround(ratio * double(plan.size()))));
        }
    }
    for (std::size_t k = 0; k < keep; ++k) plan.push_back(std::move(extra[k]));
    if (plan.empty()) throw ContractViolation("plan_epoch: no samples to train on");
    std::shuffle(plan.begin(), plan.end(), rng);
    return plan;
}

}  // namespace diffage
