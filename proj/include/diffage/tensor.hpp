// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <array>
#include <stdexcept>
#include <string>

namespace diffage {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense NCHW tensor over a contiguous Eigen array. Feature matrices use
/// shape (N, F, 1, 1).
template <typename Scalar>
struct Tensor {
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    std::array<Index, 4> shape{0, 0, 1, 1};
    Array data;

    Tensor() = default;
    Tensor(Index n, Index c, Index h = 1, Index w = 1)
        : shape{n, c, h, w}, data(Array::Zero(n * c * h * w)) {}
    explicit Tensor(const std::array<Index, 4>& s) : Tensor(s[0], s[1], s[2], s[3]) {}

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape); }
    static Tensor constant(const std::array<Index, 4>& s, Scalar value) {
        Tensor t(s);
        t.data.setConstant(value);
        return t;
    }

    Index n() const { return shape[0]; }
    Index c() const { return shape[1]; }
    Index h() const { return shape[2]; }
    Index w() const { return shape[3]; }
    Index plane() const { return shape[2] * shape[3]; }
    Index sample_size() const { return shape[1] * shape[2] * shape[3]; }
    Index size() const { return data.size(); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    Scalar* sample(Index i) { return data.data() + i * sample_size(); }
    const Scalar* sample(Index i) const { return data.data() + i * sample_size(); }

    Scalar& at(Index i, Index c, Index y, Index x) {
        return data[((i * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    Scalar at(Index i, Index c, Index y, Index x) const {
        return data[((i * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    /// Sample i viewed as a (C, H*W) matrix.
    MatrixMap<Scalar> sample_matrix(Index i) { return {sample(i), shape[1], plane()}; }
    ConstMatrixMap<Scalar> sample_matrix(Index i) const { return {sample(i), shape[1], plane()}; }

    /// Whole tensor viewed as an (N, C*H*W) matrix.
    MatrixMap<Scalar> matrix() { return {data.data(), shape[0], sample_size()}; }
    ConstMatrixMap<Scalar> matrix() const { return {data.data(), shape[0], sample_size()}; }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> out(shape);
        out.data = data.template cast<Other>();
        return out;
    }
};

inline std::string shape_string(const std::array<Index, 4>& s) {
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
           "," + std::to_string(s[3]) + ")";
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape) +
                                    " vs " + shape_string(b.shape));
    }
}

}  // namespace diffage
