// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace diffage {

/// Optimization settings. Every key is also accepted from a `key = value`
/// config file and from CLI flags of the same name.
struct TrainConfig {
    std::string preset = "reduced";  // reduced | full | tiny
    int batch_size = 64;
    double learning_rate = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int max_steps = 5000;
    double age_loss_weight = 1.0;
    double unlabeled_fraction = 0.2;
    std::uint64_t seed = 20230717;
    int checkpoint_interval = 1000;
    std::string precision = "float32";  // float32 | float64
    bool ema = false;
    double ema_decay = 0.999;
    int diffusion_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    void validate() const;

    /// Applies recognised keys; throws ConfigError on unknown keys or bad values.
    void apply(const std::map<std::string, std::string>& values);
    std::map<std::string, std::string> to_map() const;
};

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const std::map<std::string, std::string>& values);

}  // namespace diffage
