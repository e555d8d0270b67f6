// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/errors.hpp"
#include "diffage/nn.hpp"
#include "diffage/schedule.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace diffage {

template <typename Scalar>
using SemanticLatent = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Mode { train, eval };

/// Shared topology of the noise predictor and the semantic encoder.
struct UNetConfig {
    int image_size = 128;
    int in_channels = 1;
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 1, 2, 3, 4};
    int convs_per_stage = 3;
    int attention_blocks = 3;
    int norm_groups = 8;
    int time_embedding_dim = 128;
    int latent_dim = 512;

    std::vector<int> stage_widths() const {
        std::vector<int> widths;
        for (int m : channel_multipliers) widths.push_back(base_channels * m);
        return widths;
    }

    int num_stages() const { return static_cast<int>(channel_multipliers.size()); }

    /// Spatial extent at each stage; stride-2 3x3 convs halve with ceiling.
    std::vector<int> stage_sizes() const {
        std::vector<int> sizes{image_size};
        for (int s = 1; s < num_stages(); ++s) sizes.push_back((sizes.back() + 1) / 2);
        return sizes;
    }

    /// Channel sequence of the downward path, one entry per conv layer
    /// (input conv followed by every block conv).
    std::vector<int> down_channel_sequence() const {
        std::vector<int> seq;
        for (int w : stage_widths())
            for (int k = 0; k < convs_per_stage; ++k) seq.push_back(w);
        return seq;
    }

    struct SkipPair {
        int down_stage;
        int up_stage;
        int width;
    };

    /// Each downward stage feeds the mirrored upward stage of equal width.
    std::vector<SkipPair> skip_pairs() const {
        std::vector<SkipPair> pairs;
        const auto widths = stage_widths();
        for (int s = 0; s < num_stages(); ++s) pairs.push_back({s, s, widths[s]});
        return pairs;
    }

    void validate() const {
        if (in_channels < 1 || base_channels < 1 || convs_per_stage < 1 || latent_dim < 1 ||
            time_embedding_dim < 2 || attention_blocks < 0 || image_size < 1) {
            throw ConfigError("network sizes must be positive");
        }
        if (channel_multipliers.empty()) throw ConfigError("channel_multipliers must not be empty");
        if (time_embedding_dim % 2 != 0) throw ConfigError("time_embedding_dim must be even");
        for (int w : stage_widths()) {
            if (w < 1 || w % norm_groups != 0) {
                throw ConfigError("stage width " + std::to_string(w) + " not divisible by norm_groups " +
                                  std::to_string(norm_groups));
            }
        }
    }
};

struct AgeHeadConfig {
    std::vector<int> hidden{128, 32};
    double dropout = 0.5;
};

struct ModelConfig {
    UNetConfig unet;
    AgeHeadConfig age_head;

    /// 128x128 inputs, widths 32-32-64-96-128, 512-d latent.
    static ModelConfig full() { return {}; }

    /// 32x32 inputs, base 8 channels, 64-d latent.
    static ModelConfig reduced() {
        ModelConfig c;
        c.unet.image_size = 32;
        c.unet.base_channels = 8;
        c.unet.norm_groups = 4;
        c.unet.time_embedding_dim = 32;
        c.unet.latent_dim = 64;
        return c;
    }

    /// 8x8 inputs for finite-difference checks.
    static ModelConfig tiny() {
        ModelConfig c;
        c.unet.image_size = 8;
        c.unet.base_channels = 4;
        c.unet.norm_groups = 2;
        c.unet.time_embedding_dim = 8;
        c.unet.latent_dim = 8;
        c.age_head.hidden = {16, 8};
        return c;
    }

    void validate() const {
        unet.validate();
        if (age_head.hidden.empty()) throw ConfigError("age head needs at least one hidden layer");
        if (age_head.dropout < 0.0 || age_head.dropout >= 1.0) throw ConfigError("age head dropout must lie in [0, 1)");
    }
};

/// Sinusoidal embedding of integer step indices, shape (N, dim).
template <typename Scalar>
Tensor<Scalar> timestep_embedding(const std::vector<int>& t, int dim) {
    const int half = dim / 2;
    Tensor<Scalar> out(static_cast<Index>(t.size()), dim);
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
            out.at(i, k, 0, 0) = Scalar(std::sin(double(t[i]) * freq));
            out.at(i, half + k, 0, 0) = Scalar(std::cos(double(t[i]) * freq));
        }
    }
    return out;
}

/// conv -> group norm -> (optional affine modulation) -> SiLU, plus residual path.
template <typename Scalar>
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(Index in, Index out, Index groups, std::optional<Index> cond_dim, nn::Rng& rng)
        : conv_(in, out, 3, 1, rng), norm_(out, groups) {
        if (cond_dim) cond_ = nn::Linear<Scalar>(*cond_dim, 2 * out, rng);
        if (in != out) skip_ = nn::Conv2d<Scalar>(in, out, 1, 1, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>* cond) const {
        auto h = norm_(conv_(x));
        if (cond_) {
            if (!cond) throw ContractViolation("conditioned block called without conditioning");
            h = ops::modulate(h, (*cond_)(*cond));
        }
        h = ops::silu(h);
        return ops::add(h, skip_ ? (*skip_)(x) : x);
    }

    void collect(const std::string& prefix, nn::ParamList<Scalar>& out) const {
        conv_.collect(prefix + ".conv", out);
        norm_.collect(prefix + ".norm", out);
        if (cond_) cond_->collect(prefix + ".cond", out);
        if (skip_) skip_->collect(prefix + ".skip", out);
    }

private:
    nn::Conv2d<Scalar> conv_;
    nn::GroupNorm<Scalar> norm_;
    std::optional<nn::Linear<Scalar>> cond_;
    std::optional<nn::Conv2d<Scalar>> skip_;
};

/// Pre-norm single-head self-attention over the flattened spatial grid.
template <typename Scalar>
class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(Index channels, Index groups, nn::Rng& rng) : norm_(channels, groups) {
        const double bound = 1.0 / std::sqrt(double(channels));
        qkv_weight_ = nn::uniform_param<Scalar>({3 * channels, channels, 1, 1}, bound, rng);
        qkv_bias_ = nn::uniform_param<Scalar>({1, 3 * channels, 1, 1}, bound, rng);
        out_weight_ = nn::uniform_param<Scalar>({channels, channels, 1, 1}, bound, rng);
        out_bias_ = nn::uniform_param<Scalar>({1, channels, 1, 1}, bound, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const {
        return ops::add(x, ops::self_attention(norm_(x), qkv_weight_, qkv_bias_, out_weight_, out_bias_));
    }

    void collect(const std::string& prefix, nn::ParamList<Scalar>& out) const {
        norm_.collect(prefix + ".norm", out);
        out.push_back({prefix + ".qkv.weight", qkv_weight_});
        out.push_back({prefix + ".qkv.bias", qkv_bias_});
        out.push_back({prefix + ".out.weight", out_weight_});
        out.push_back({prefix + ".out.bias", out_bias_});
    }

private:
    nn::GroupNorm<Scalar> norm_;
    Var<Scalar> qkv_weight_, qkv_bias_, out_weight_, out_bias_;
};

/// Downward path plus middle attention stack, shared by both image networks.
template <typename Scalar>
class DownPath {
public:
    DownPath() = default;
    DownPath(const UNetConfig& cfg, std::optional<Index> cond_dim, nn::Rng& rng) {
        const auto widths = cfg.stage_widths();
        in_conv_ = nn::Conv2d<Scalar>(cfg.in_channels, widths[0], 3, 1, rng);
        for (int s = 0; s < cfg.num_stages(); ++s) {
            const Index prev = s == 0 ? widths[0] : widths[s - 1];
            if (s > 0) downsample_.emplace_back(prev, prev, 3, 2, rng);
            std::vector<ResBlock<Scalar>> stage;
            for (int k = 0; k < cfg.convs_per_stage; ++k) {
                stage.emplace_back(k == 0 ? prev : widths[s], widths[s], cfg.norm_groups, cond_dim, rng);
            }
            blocks_.push_back(std::move(stage));
        }
        for (int a = 0; a < cfg.attention_blocks; ++a) middle_.emplace_back(widths.back(), cfg.norm_groups, rng);
    }

    /// Returns the middle-block output; per-stage outputs go to `skips` if given.
    Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>* cond, std::vector<Var<Scalar>>* skips) const {
        auto h = in_conv_(x);
        for (std::size_t s = 0; s < blocks_.size(); ++s) {
            if (s > 0) h = downsample_[s - 1](h);
            for (const auto& block : blocks_[s]) h = block(h, cond);
            if (skips) skips->push_back(h);
        }
        for (const auto& attn : middle_) h = attn(h);
        return h;
    }

    void collect(const std::string& prefix, nn::ParamList<Scalar>& out) const {
        in_conv_.collect(prefix + ".in_conv", out);
        for (std::size_t s = 0; s < blocks_.size(); ++s) {
            if (s > 0) downsample_[s - 1].collect(prefix + ".down" + std::to_string(s) + ".resample", out);
            for (std::size_t k = 0; k < blocks_[s].size(); ++k) {
                blocks_[s][k].collect(prefix + ".down" + std::to_string(s) + ".block" + std::to_string(k), out);
            }
        }
        for (std::size_t a = 0; a < middle_.size(); ++a) middle_[a].collect(prefix + ".mid" + std::to_string(a), out);
    }

private:
    nn::Conv2d<Scalar> in_conv_;
    std::vector<nn::Conv2d<Scalar>> downsample_;
    std::vector<std::vector<ResBlock<Scalar>>> blocks_;
    std::vector<AttentionBlock<Scalar>> middle_;
};

/// Noise predictor conditioned on the step index and the semantic latent.
template <typename Scalar>
class NoisePredictor {
public:
    NoisePredictor() = default;
    NoisePredictor(const UNetConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
        const Index temb = cfg.time_embedding_dim;
        const Index cond_dim = temb + cfg.latent_dim;
        time_fc1_ = nn::Linear<Scalar>(temb, temb, rng);
        time_fc2_ = nn::Linear<Scalar>(temb, temb, rng);
        down_ = DownPath<Scalar>(cfg, cond_dim, rng);
        const auto widths = cfg.stage_widths();
        up_blocks_.resize(widths.size());
        for (int s = cfg.num_stages() - 1; s >= 0; --s) {
            const Index next = s == 0 ? widths[0] : widths[s - 1];
            for (int k = 0; k < cfg.convs_per_stage; ++k) {
                const bool last = k == cfg.convs_per_stage - 1;
                up_blocks_[s].emplace_back(widths[s], last ? next : widths[s], cfg.norm_groups, cond_dim, rng);
            }
            if (s > 0) upsample_conv_.emplace_back(next, next, 3, 1, rng);
        }
        out_norm_ = nn::GroupNorm<Scalar>(widths[0], cfg.norm_groups);
        out_conv_ = nn::Conv2d<Scalar>(widths[0], cfg.in_channels, 3, 1, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& x_t, const std::vector<int>& t, const Var<Scalar>& z_sem) const {
        return forward_with_embedding(x_t, Var<Scalar>(timestep_embedding<Scalar>(t, cfg_.time_embedding_dim)), z_sem);
    }

    /// Forward pass taking the raw sinusoidal embedding directly.
    Var<Scalar> forward_with_embedding(const Var<Scalar>& x_t, const Var<Scalar>& embedding,
                                       const Var<Scalar>& z_sem) const {
        if (x_t.value().h() != cfg_.image_size || x_t.value().w() != cfg_.image_size) {
            throw ContractViolation("noise predictor: expected " + std::to_string(cfg_.image_size) + "x" +
                                    std::to_string(cfg_.image_size) + " input");
        }
        if (z_sem.value().sample_size() != cfg_.latent_dim || z_sem.value().n() != x_t.value().n()) {
            throw ContractViolation("noise predictor: latent shape mismatch");
        }
        const auto temb = time_fc2_(ops::silu(time_fc1_(embedding)));
        const auto cond = ops::concat_features(ops::silu(temb), z_sem);

        std::vector<Var<Scalar>> skips;
        auto h = down_(x_t, &cond, &skips);
        for (int s = cfg_.num_stages() - 1; s >= 0; --s) {
            h = ops::add(h, skips[s]);
            for (const auto& block : up_blocks_[s]) h = block(h, &cond);
            if (s > 0) {
                const auto& target = skips[s - 1].value();
                h = ops::upsample_nearest(h, target.h(), target.w());
                h = upsample_conv_[cfg_.num_stages() - 1 - s](h);
            }
        }
        return out_conv_(ops::silu(out_norm_(h)));
    }

    void collect(const std::string& prefix, nn::ParamList<Scalar>& out) const {
        time_fc1_.collect(prefix + ".time.fc1", out);
        time_fc2_.collect(prefix + ".time.fc2", out);
        down_.collect(prefix, out);
        for (int s = cfg_.num_stages() - 1; s >= 0; --s) {
            for (std::size_t k = 0; k < up_blocks_[s].size(); ++k) {
                up_blocks_[s][k].collect(prefix + ".up" + std::to_string(s) + ".block" + std::to_string(k), out);
            }
            if (s > 0) upsample_conv_[cfg_.num_stages() - 1 - s].collect(prefix + ".up" + std::to_string(s) + ".resample", out);
        }
        out_norm_.collect(prefix + ".out_norm", out);
        out_conv_.collect(prefix + ".out_conv", out);
    }

private:
    UNetConfig cfg_;
    nn::Linear<Scalar> time_fc1_, time_fc2_;
    DownPath<Scalar> down_;
    std::vector<std::vector<ResBlock<Scalar>>> up_blocks_;
    std::vector<nn::Conv2d<Scalar>> upsample_conv_;
    nn::GroupNorm<Scalar> out_norm_;
    nn::Conv2d<Scalar> out_conv_;
};

/// Downward path and middle block followed by a projection to the latent.
template <typename Scalar>
class SemanticEncoder {
public:
    SemanticEncoder() = default;
    SemanticEncoder(const UNetConfig& cfg, nn::Rng& rng) : cfg_(cfg), down_(cfg, std::nullopt, rng) {
        const Index side = cfg.stage_sizes().back();
        project_ = nn::Linear<Scalar>(cfg.stage_widths().back() * side * side, cfg.latent_dim, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& x0) const {
        if (x0.value().h() != cfg_.image_size || x0.value().w() != cfg_.image_size ||
            x0.value().c() != cfg_.in_channels) {
            throw ContractViolation("semantic encoder: expected " + std::to_string(cfg_.in_channels) + "x" +
                                    std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) +
                                    " input, got " + shape_string(x0.shape()));
        }
        return project_(ops::flatten(down_(x0, nullptr, nullptr)));
    }

    void collect(const std::string& prefix, nn::ParamList<Scalar>& out) const {
        down_.collect(prefix, out);
        project_.collect(prefix + ".project", out);
    }

private:
    UNetConfig cfg_;
    DownPath<Scalar> down_;
    nn::Linear<Scalar> project_;
};

/// MLP from the latent to age in years. Hidden layers are followed by ReLU,
/// batch norm and dropout; the output is softplus(mean + std * raw) so ages
/// stay positive while the raw output lives on the standardized scale.
template <typename Scalar>
class AgeHead {
public:
    AgeHead() = default;
    AgeHead(Index latent_dim, const AgeHeadConfig& cfg, nn::Rng& rng) : dropout_(Scalar(cfg.dropout)) {
        Index in = latent_dim;
        for (int width : cfg.hidden) {
            layers_.emplace_back(in, width, rng);
            norms_.emplace_back(width);
            in = width;
        }
        output_ = nn::Linear<Scalar>(in, 1, rng);
    }

    double age_mean = 0.0;
    double age_std = 1.0;

    Var<Scalar> operator()(const Var<Scalar>& z, Mode mode, nn::Rng* rng) {
        if (!z.value().data.allFinite()) throw ContractViolation("age head: non-finite latent entries");
        const bool training = mode == Mode::train;
        if (training && dropout_ > Scalar(0) && !rng) throw ContractViolation("age head: training mode needs a generator");
        auto h = z;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            h = norms_[k](ops::relu(layers_[k](h)), training);
            if (training) h = ops::dropout(h, dropout_, *rng);
        }
        return ops::softplus_affine(output_(h), Scalar(age_mean), Scalar(age_std));
    }

    void collect(const std::string& prefix, nn::ParamList<Scalar>& out) const {
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            layers_[k].collect(prefix + ".fc" + std::to_string(k), out);
            norms_[k].collect(prefix + ".bn" + std::to_string(k), out);
        }
        output_.collect(prefix + ".out", out);
    }

    void collect_buffers(const std::string& prefix, nn::BufferList<Scalar>& out) {
        for (std::size_t k = 0; k < norms_.size(); ++k) norms_[k].collect_buffers(prefix + ".bn" + std::to_string(k), out);
    }

private:
    Scalar dropout_ = Scalar(0.5);
    std::vector<nn::Linear<Scalar>> layers_;
    std::vector<nn::BatchNorm1d<Scalar>> norms_;
    nn::Linear<Scalar> output_;
};

/// The three jointly trained networks with their schedule. Parameters are
/// shared handles, so bundles move but never copy.
template <typename Scalar>
struct ModelBundle {
    ModelConfig config;
    NoiseSchedule schedule;
    NoisePredictor<Scalar> noise_predictor;
    SemanticEncoder<Scalar> encoder;
    AgeHead<Scalar> age_head;

    ModelBundle() = default;
    ModelBundle(const ModelConfig& cfg, NoiseSchedule sched, std::uint64_t seed) : config(cfg), schedule(std::move(sched)) {
        cfg.validate();
        nn::Rng rng(seed);
        noise_predictor = NoisePredictor<Scalar>(cfg.unet, rng);
        encoder = SemanticEncoder<Scalar>(cfg.unet, rng);
        age_head = AgeHead<Scalar>(cfg.unet.latent_dim, cfg.age_head, rng);
    }
    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;
    ModelBundle(ModelBundle&&) noexcept = default;
    ModelBundle& operator=(ModelBundle&&) noexcept = default;

    nn::ParamList<Scalar> noise_predictor_params() const {
        nn::ParamList<Scalar> out;
        noise_predictor.collect("eps", out);
        return out;
    }
    nn::ParamList<Scalar> encoder_params() const {
        nn::ParamList<Scalar> out;
        encoder.collect("enc", out);
        return out;
    }
    nn::ParamList<Scalar> age_head_params() const {
        nn::ParamList<Scalar> out;
        age_head.collect("age", out);
        return out;
    }
    nn::ParamList<Scalar> params() const {
        auto out = noise_predictor_params();
        for (auto& p : encoder_params()) out.push_back(std::move(p));
        for (auto& p : age_head_params()) out.push_back(std::move(p));
        return out;
    }
    nn::BufferList<Scalar> buffers() {
        nn::BufferList<Scalar> out;
        age_head.collect_buffers("age", out);
        return out;
    }
};

struct ParameterCount {
    std::int64_t noise_predictor = 0;
    std::int64_t semantic_encoder = 0;
    std::int64_t age_head = 0;
    std::int64_t total() const { return noise_predictor + semantic_encoder + age_head; }
};

template <typename Scalar>
std::int64_t count_parameters(const nn::ParamList<Scalar>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.var.value().size();
    return n;
}

template <typename Scalar>
ParameterCount count_parameters(const ModelBundle<Scalar>& bundle) {
    return {count_parameters(bundle.noise_predictor_params()), count_parameters(bundle.encoder_params()),
            count_parameters(bundle.age_head_params())};
}

/// Latents for a batch of images, shape (N, latent_dim).
template <typename Scalar>
Tensor<Scalar> semantic_encode(const ModelBundle<Scalar>& bundle, const Tensor<Scalar>& x0) {
    NoGradGuard guard;
    return bundle.encoder(Var<Scalar>(x0)).value();
}

template <typename Scalar>
Tensor<Scalar> noise_predict(const ModelBundle<Scalar>& bundle, const Tensor<Scalar>& x_t, const std::vector<int>& t,
                             const Tensor<Scalar>& z_sem) {
    for (int step : t) bundle.schedule.check(step);
    NoGradGuard guard;
    return bundle.noise_predictor(Var<Scalar>(x_t), t, Var<Scalar>(z_sem)).value();
}

/// Evaluation-mode age predictions in years, one per latent row.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> age_predict(ModelBundle<Scalar>& bundle, const Tensor<Scalar>& z_sem) {
    NoGradGuard guard;
    return bundle.age_head(Var<Scalar>(z_sem), Mode::eval, nullptr).value().data;
}

}  // namespace diffage
