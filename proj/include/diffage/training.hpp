// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/checkpoint.hpp"
#include "diffage/diffusion.hpp"
#include "diffage/networks.hpp"
#include "diffage/optimizer.hpp"
#include "diffage/seed.hpp"
#include "diffage/train_config.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

namespace diffage {

template <typename Scalar>
struct Batch {
    Tensor<Scalar> images;
    std::vector<std::optional<double>> ages;
};

struct BatchLoss {
    double diffusion_term = 0.0;
    double age_term = 0.0;
    double total = 0.0;
    int labeled = 0;
};

ModelConfig model_config_for_preset(const std::string& preset);
NoiseSchedule schedule_for(const TrainConfig& cfg);

/// One joint update of the noise predictor, semantic encoder and age head.
/// The step's randomness (timesteps, noise, dropout) is a pure function of
/// `step_seed`; the diffusion draws happen before anything label-dependent.
template <typename Scalar>
BatchLoss training_step(ModelBundle<Scalar>& model, Adam<Scalar>& optimizer, const Batch<Scalar>& batch,
                        const TrainConfig& cfg, std::uint64_t step_seed) {
    const Index n = batch.images.n();
    if (n == 0) throw ContractViolation("training_step: empty batch");
    if (static_cast<Index>(batch.ages.size()) != n) throw ContractViolation("training_step: one label slot per image");

    std::mt19937_64 noise_rng(mix_seed(step_seed, 1));
    std::mt19937_64 dropout_rng(mix_seed(step_seed, 2));
    std::uniform_int_distribution<int> pick_t(0, model.schedule.num_steps - 1);
    std::vector<int> t(n);
    for (auto& ti : t) ti = pick_t(noise_rng);
    const auto eps = standard_normal<Scalar>(batch.images.shape, noise_rng);

    const auto params = model.params();
    zero_grad(params);

    const auto z = model.encoder(Var<Scalar>(batch.images));
    const Var<Scalar> x_t(q_sample(batch.images, t, eps, model.schedule));
    const auto eps_pred = model.noise_predictor(x_t, t, z);
    const auto diffusion = ops::sum_squared_error_mean(eps_pred, eps);

    BatchLoss loss;
    loss.diffusion_term = double(diffusion.item());
    if (!std::isfinite(loss.diffusion_term)) throw NonFiniteLoss("diffusion_term");
    auto total = diffusion;

    std::vector<Index> rows;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> targets;
    for (Index i = 0; i < n; ++i)
        if (batch.ages[i]) rows.push_back(i);
    loss.labeled = static_cast<int>(rows.size());
    if (!rows.empty()) {
        targets.resize(static_cast<Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) targets[r] = Scalar(*batch.ages[rows[r]]);
        const Scalar spread = Scalar(model.age_head.age_std);
        if (cfg.age_loss_weight > 0.0) {
            const auto pred = model.age_head(ops::gather_rows(z, rows), Mode::train, &dropout_rng);
            const auto age = ops::scaled_mse(pred, targets, spread);
            loss.age_term = double(age.item());
            total = ops::add_scaled(diffusion, age, Scalar(cfg.age_loss_weight));
        } else {
            NoGradGuard guard;
            const auto pred = model.age_head(ops::gather_rows(z.detach(), rows), Mode::train, &dropout_rng);
            loss.age_term = double(ops::scaled_mse(pred, targets, spread).item());
        }
    }
    loss.total = double(total.item());
    if (!std::isfinite(loss.age_term)) throw NonFiniteLoss("age_term");
    if (!std::isfinite(loss.total)) throw NonFiniteLoss("total");

    backward(total);
    optimizer.step(params);
    return loss;
}

/// In-memory training set at the model's resolution; pixels in [0, 1].
template <typename Scalar>
struct TrainingData {
    std::vector<std::string> ids;
    std::vector<Eigen::Array<Scalar, Eigen::Dynamic, 1>> images;
    std::vector<std::optional<double>> ages;
    int image_size = 0;

    std::size_t size() const { return images.size(); }
};

/// Whole-batch schedule for one epoch: labeled and unlabeled pools are
/// batched separately, unlabeled batches capped at the target fraction, and
/// the batch list shuffled.
std::vector<std::vector<std::size_t>> plan_epoch(const std::vector<std::size_t>& labeled,
                                                 const std::vector<std::size_t>& unlabeled, const TrainConfig& cfg,
                                                 std::uint64_t epoch);

template <typename Scalar>
Batch<Scalar> assemble_batch(const TrainingData<Scalar>& data, const std::vector<std::size_t>& members) {
    Batch<Scalar> batch;
    const Index side = data.image_size;
    batch.images = Tensor<Scalar>(static_cast<Index>(members.size()), 1, side, side);
    for (std::size_t k = 0; k < members.size(); ++k) {
        batch.images.data.segment(Index(k) * side * side, side * side) = data.images[members[k]];
        batch.ages.push_back(data.ages[members[k]]);
    }
    return batch;
}

struct LogRow {
    int step = 0;
    double diffusion_term = 0.0;
    double age_term = 0.0;
    double total = 0.0;
    double wall_time = 0.0;
};

struct FitOptions {
    /// Checkpoints, metrics log and the final model go here; empty keeps everything in memory.
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume_from;
    std::function<void(const LogRow&)> on_step;
    nlohmann::json provenance;
};

template <typename Scalar>
struct FitResult {
    ModelBundle<Scalar> bundle;
    std::vector<LogRow> log;
    int steps_completed = 0;
};

inline std::string format_log_row(const LogRow& row) {
    std::ostringstream os;
    os << row.step << ',' << std::setprecision(10) << row.diffusion_term << ',' << row.age_term << ',' << row.total << ','
       << std::setprecision(6) << std::fixed << row.wall_time;
    return os.str();
}

/// Mean and population std of the labeled ages; std falls back to 1 when undefined.
inline std::pair<double, double> age_normalization(const std::vector<std::optional<double>>& ages) {
    double sum = 0.0, sq = 0.0;
    int count = 0;
    for (const auto& a : ages) {
        if (!a) continue;
        sum += *a;
        sq += *a * *a;
        ++count;
    }
    if (count == 0) return {0.0, 1.0};
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    return {mean, var > 1e-12 ? std::sqrt(var) : 1.0};
}

/// Semi-supervised optimization loop with checkpointing and a step log.
template <typename Scalar>
FitResult<Scalar> fit(const TrainingData<Scalar>& data, const TrainConfig& cfg, const FitOptions& options = {}) {
    cfg.validate();
    const ModelConfig model_cfg = model_config_for_preset(cfg.preset);
    if (data.size() == 0) throw ContractViolation("fit: empty training set");
    if (data.image_size != model_cfg.unet.image_size) {
        throw ContractViolation("fit: training images are " + std::to_string(data.image_size) + " px, model expects " +
                                std::to_string(model_cfg.unet.image_size));
    }

    std::vector<std::size_t> labeled, unlabeled;
    for (std::size_t i = 0; i < data.size(); ++i) (data.ages[i] ? labeled : unlabeled).push_back(i);
    if (cfg.age_loss_weight > 0.0 && labeled.empty()) throw ContractViolation("fit: age_loss_weight > 0 needs labeled samples");

    FitResult<Scalar> result;
    Adam<Scalar> optimizer(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    std::map<std::string, Tensor<Scalar>> ema;
    int start_step = 0;
    if (options.resume_from) {
        auto ck = load_checkpoint<Scalar>(*options.resume_from);
        result.bundle = std::move(ck.bundle);
        if (ck.optimizer) optimizer = std::move(*ck.optimizer);
        ema = std::move(ck.ema);
        start_step = ck.step;
    } else {
        result.bundle = ModelBundle<Scalar>(model_cfg, schedule_for(cfg), mix_seed(cfg.seed, 0xB0));
        const auto [mean, spread] = age_normalization(data.ages);
        result.bundle.age_head.age_mean = mean;
        result.bundle.age_head.age_std = spread;
    }
    auto& bundle = result.bundle;
    const auto params = bundle.params();
    if (cfg.ema && ema.empty()) {
        for (const auto& p : params) ema.emplace(p.name, p.var.value());
    }

    std::ofstream log_file;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir / "checkpoints");
        const auto log_path = options.out_dir / "metrics.csv";
        const bool fresh = !std::filesystem::exists(log_path) || !options.resume_from;
        log_file.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log_file) throw DataError("cannot write " + log_path.string());
        if (fresh) log_file << "step,diffusion_term,age_term,total,wall_time\n";
    }

    const auto epoch_len = plan_epoch(labeled, unlabeled, cfg, 0).size();
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::vector<std::size_t>> plan;
    std::uint64_t planned_epoch = ~0ULL;
    for (int step = start_step; step < cfg.max_steps; ++step) {
        const std::uint64_t epoch = std::uint64_t(step) / epoch_len;
        if (epoch != planned_epoch) {
            plan = plan_epoch(labeled, unlabeled, cfg, epoch);
            planned_epoch = epoch;
        }
        const auto batch = assemble_batch(data, plan[std::uint64_t(step) % epoch_len]);
        BatchLoss loss;
        try {
            loss = training_step(bundle, optimizer, batch, cfg, mix_seed(cfg.seed, 0x5EED0000ULL + std::uint64_t(step)));
        } catch (const NonFiniteLoss&) {
            // The failed step never reached the optimizer, so the weights are the last good state.
            if (!options.out_dir.empty()) {
                save_checkpoint(options.out_dir / "checkpoints" / "last_good", bundle, cfg, step, &optimizer,
                                cfg.ema ? &ema : nullptr, options.provenance);
            }
            throw;
        }
        if (cfg.ema) {
            for (const auto& p : params) {
                auto& shadow = ema.at(p.name);
                shadow.data = Scalar(cfg.ema_decay) * shadow.data + Scalar(1.0 - cfg.ema_decay) * p.var.value().data;
            }
        }

        LogRow row{step + 1, loss.diffusion_term, loss.age_term, loss.total,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()};
        result.log.push_back(row);
        if (log_file.is_open()) log_file << format_log_row(row) << '\n' << std::flush;
        if (options.on_step) options.on_step(row);
        result.steps_completed = step + 1;

        if (!options.out_dir.empty() && cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0) {
            save_checkpoint(options.out_dir / "checkpoints" / ("step_" + std::to_string(step + 1)), bundle, cfg, step + 1,
                            &optimizer, cfg.ema ? &ema : nullptr, options.provenance);
        }
    }

    if (cfg.ema) {
        for (auto p : params) p.var.mutable_value() = ema.at(p.name);
    }
    if (!options.out_dir.empty()) {
        save_checkpoint(options.out_dir / "model", bundle, cfg, result.steps_completed, &optimizer, cfg.ema ? &ema : nullptr,
                        options.provenance);
    }
    return result;
}

}  // namespace diffage
