// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/ops.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace diffage::nn {

using Rng = std::mt19937_64;

template <typename Scalar>
struct NamedParam {
    std::string name;
    Var<Scalar> var;
};

template <typename Scalar>
using ParamList = std::vector<NamedParam<Scalar>>;

template <typename Scalar>
struct NamedBuffer {
    std::string name;
    Eigen::Array<Scalar, Eigen::Dynamic, 1>* data;
};

template <typename Scalar>
using BufferList = std::vector<NamedBuffer<Scalar>>;

template <typename Scalar>
Var<Scalar> uniform_param(const std::array<Index, 4>& shape, double bound, Rng& rng) {
    Tensor<Scalar> t(shape);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < t.size(); ++i) t.data[i] = Scalar(dist(rng));
    return Var<Scalar>(std::move(t), true);
}

template <typename Scalar>
Var<Scalar> constant_param(const std::array<Index, 4>& shape, Scalar value) {
    return Var<Scalar>(Tensor<Scalar>::constant(shape, value), true);
}

template <typename Scalar>
struct Linear {
    Var<Scalar> weight, bias;

    Linear() = default;
    Linear(Index in, Index out, Rng& rng) {
        const double bound = 1.0 / std::sqrt(double(in));
        weight = uniform_param<Scalar>({out, in, 1, 1}, bound, rng);
        bias = uniform_param<Scalar>({1, out, 1, 1}, bound, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::linear(x, weight, bias); }

    void collect(const std::string& prefix, ParamList<Scalar>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename Scalar>
struct Conv2d {
    Var<Scalar> weight, bias;
    Index stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(Index in, Index out, Index kernel, Index stride_, Rng& rng) : stride(stride_), pad(kernel / 2) {
        const double bound = 1.0 / std::sqrt(double(in * kernel * kernel));
        weight = uniform_param<Scalar>({out, in, kernel, kernel}, bound, rng);
        bias = uniform_param<Scalar>({1, out, 1, 1}, bound, rng);
    }

    Index out_channels() const { return weight.value().n(); }

    Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

    void collect(const std::string& prefix, ParamList<Scalar>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename Scalar>
struct GroupNorm {
    Var<Scalar> gamma, beta;
    Index groups = 1;

    GroupNorm() = default;
    GroupNorm(Index channels, Index groups_)
        : gamma(constant_param<Scalar>({1, channels, 1, 1}, Scalar(1))),
          beta(constant_param<Scalar>({1, channels, 1, 1}, Scalar(0))),
          groups(groups_) {}

    Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::group_norm(x, gamma, beta, groups); }

    void collect(const std::string& prefix, ParamList<Scalar>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

template <typename Scalar>
struct BatchNorm1d {
    Var<Scalar> gamma, beta;
    ops::BatchNormStats<Scalar> stats;

    BatchNorm1d() = default;
    explicit BatchNorm1d(Index features)
        : gamma(constant_param<Scalar>({1, features, 1, 1}, Scalar(1))),
          beta(constant_param<Scalar>({1, features, 1, 1}, Scalar(0))) {
        stats.running_mean = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(features);
        stats.running_var = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Ones(features);
    }

    Var<Scalar> operator()(const Var<Scalar>& x, bool training) {
        return ops::batch_norm(x, gamma, beta, stats, training);
    }

    void collect(const std::string& prefix, ParamList<Scalar>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }

    void collect_buffers(const std::string& prefix, BufferList<Scalar>& out) {
        out.push_back({prefix + ".running_mean", &stats.running_mean});
        out.push_back({prefix + ".running_var", &stats.running_var});
    }
};

}  // namespace diffage::nn
