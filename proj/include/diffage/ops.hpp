// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "diffage/autograd.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace diffage::ops {

namespace detail {

template <typename Scalar>
Node<Scalar>* grad_target(const Var<Scalar>& v) {
    return v.requires_grad() ? v.node().get() : nullptr;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
Scalar softplus(Scalar x) {
    return x > Scalar(20) ? x : std::log1p(std::exp(x));
}

struct ConvGeometry {
    Index in_c, in_h, in_w, out_h, out_w, kernel, stride, pad;
    Index patch() const { return in_c * kernel * kernel; }
    Index positions() const { return out_h * out_w; }
};

template <typename Scalar>
void im2col(const Scalar* src, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
    cols.resize(g.patch(), g.positions());
    for (Index c = 0; c < g.in_c; ++c) {
        for (Index ky = 0; ky < g.kernel; ++ky) {
            for (Index kx = 0; kx < g.kernel; ++kx) {
                Scalar* row = cols.data() + ((c * g.kernel + ky) * g.kernel + kx) * g.positions();
                for (Index oy = 0; oy < g.out_h; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    Scalar* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        std::fill(dst, dst + g.out_w, Scalar(0));
                        continue;
                    }
                    const Scalar* line = src + (c * g.in_h + iy) * g.in_w;
                    for (Index ox = 0; ox < g.out_w; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix >= 0 && ix < g.in_w) ? line[ix] : Scalar(0);
                    }
                }
            }
        }
    }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dst) {
    for (Index c = 0; c < g.in_c; ++c) {
        for (Index ky = 0; ky < g.kernel; ++ky) {
            for (Index kx = 0; kx < g.kernel; ++kx) {
                const Scalar* row = cols.data() + ((c * g.kernel + ky) * g.kernel + kx) * g.positions();
                for (Index oy = 0; oy < g.out_h; ++oy) {
                    const Index iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    Scalar* line = dst + (c * g.in_h + iy) * g.in_w;
                    const Scalar* src = row + oy * g.out_w;
                    for (Index ox = 0; ox < g.out_w; ++ox) {
                        const Index ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.in_w) line[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor<Scalar> out(a.shape());
    out.data = a.value().data + b.value().data;
    auto* pa = detail::grad_target(a);
    auto* pb = detail::grad_target(b);
    return make_result<Scalar>(std::move(out), {a, b}, [pa, pb](Node<Scalar>& self) {
        if (pa) pa->ensure_grad().data += self.grad.data;
        if (pb) pb->ensure_grad().data += self.grad.data;
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
    Tensor<Scalar> out(a.shape());
    out.data = a.value().data * factor;
    auto* pa = detail::grad_target(a);
    return make_result<Scalar>(std::move(out), {a}, [pa, factor](Node<Scalar>& self) {
        pa->ensure_grad().data += self.grad.data * factor;
    });
}

/// a + weight * b for scalar-shaped operands.
template <typename Scalar>
Var<Scalar> add_scaled(const Var<Scalar>& a, const Var<Scalar>& b, Scalar weight) {
    require_same_shape(a.value(), b.value(), "add_scaled");
    Tensor<Scalar> out(a.shape());
    out.data = a.value().data + weight * b.value().data;
    auto* pa = detail::grad_target(a);
    auto* pb = detail::grad_target(b);
    return make_result<Scalar>(std::move(out), {a, b}, [pa, pb, weight](Node<Scalar>& self) {
        if (pa) pa->ensure_grad().data += self.grad.data;
        if (pb) pb->ensure_grad().data += weight * self.grad.data;
    });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a) {
    const auto& x = a.value().data;
    Tensor<Scalar> out(a.shape());
    out.data = x / (Scalar(1) + (-x).exp());
    auto* pa = detail::grad_target(a);
    return make_result<Scalar>(std::move(out), {a}, [pa](Node<Scalar>& self) {
        const auto& x = pa->value.data;
        const auto s = (Scalar(1) / (Scalar(1) + (-x).exp())).eval();
        pa->ensure_grad().data += self.grad.data * s * (Scalar(1) + x * (Scalar(1) - s));
    });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
    Tensor<Scalar> out(a.shape());
    out.data = a.value().data.max(Scalar(0));
    auto* pa = detail::grad_target(a);
    return make_result<Scalar>(std::move(out), {a}, [pa](Node<Scalar>& self) {
        pa->ensure_grad().data += (pa->value.data > Scalar(0)).select(self.grad.data, Scalar(0));
    });
}

/// softplus(offset + gain * x), elementwise.
template <typename Scalar>
Var<Scalar> softplus_affine(const Var<Scalar>& a, Scalar offset, Scalar gain) {
    Tensor<Scalar> out(a.shape());
    const auto& x = a.value().data;
    for (Index i = 0; i < x.size(); ++i) out.data[i] = detail::softplus(offset + gain * x[i]);
    auto* pa = detail::grad_target(a);
    return make_result<Scalar>(std::move(out), {a}, [pa, offset, gain](Node<Scalar>& self) {
        auto& g = pa->ensure_grad().data;
        const auto& x = pa->value.data;
        for (Index i = 0; i < x.size(); ++i) g[i] += self.grad.data[i] * gain * detail::sigmoid(offset + gain * x[i]);
    });
}

/// 2D convolution with square kernel; weight (Cout, Cin, k, k), bias (1, Cout).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, Index stride,
                   Index pad) {
    const auto& in = x.value();
    const auto& w = weight.value();
    if (w.c() != in.c()) throw std::invalid_argument("conv2d: channel mismatch");
    detail::ConvGeometry g{in.c(), in.h(), in.w(), 0, 0, w.h(), stride, pad};
    g.out_h = (in.h() + 2 * pad - g.kernel) / stride + 1;
    g.out_w = (in.w() + 2 * pad - g.kernel) / stride + 1;
    const Index cout = w.n();
    const bool pointwise = g.kernel == 1 && stride == 1 && pad == 0;

    Tensor<Scalar> out(in.n(), cout, g.out_h, g.out_w);
    ConstMatrixMap<Scalar> wm(w.data.data(), cout, g.patch());
    const auto b = bias.value().data.matrix();
    RowMatrix<Scalar> cols;
    for (Index i = 0; i < in.n(); ++i) {
        auto o = out.sample_matrix(i);
        if (pointwise) {
            o.noalias() = wm * in.sample_matrix(i);
        } else {
            detail::im2col(in.sample(i), g, cols);
            o.noalias() = wm * cols;
        }
        o.colwise() += b;
    }

    auto* px = detail::grad_target(x);
    auto* pw = detail::grad_target(weight);
    auto* pb = detail::grad_target(bias);
    return make_result<Scalar>(std::move(out), {x, weight, bias}, [px, pw, pb, g, cout, pointwise](Node<Scalar>& self) {
        const auto& in = self.parents[0]->value;
        const auto& w = self.parents[1]->value;
        ConstMatrixMap<Scalar> wm(w.data.data(), cout, g.patch());
        RowMatrix<Scalar> cols, dcols;
        for (Index i = 0; i < in.n(); ++i) {
            ConstMatrixMap<Scalar> dy(self.grad.sample(i), cout, g.positions());
            if (pb) pb->ensure_grad().data.matrix() += dy.rowwise().sum();
            if (pw) {
                MatrixMap<Scalar> dw(pw->ensure_grad().data.data(), cout, g.patch());
                if (pointwise) {
                    dw.noalias() += dy * in.sample_matrix(i).transpose();
                } else {
                    detail::im2col(in.sample(i), g, cols);
                    dw.noalias() += dy * cols.transpose();
                }
            }
            if (px) {
                auto& gx = px->ensure_grad();
                if (pointwise) {
                    gx.sample_matrix(i).noalias() += wm.transpose() * dy;
                } else {
                    dcols.noalias() = wm.transpose() * dy;
                    detail::col2im(dcols, g, gx.sample(i));
                }
            }
        }
    });
}

/// Group normalization with per-channel affine parameters gamma, beta of shape (1, C).
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Index groups,
                       Scalar eps = Scalar(1e-5)) {
    const auto& in = x.value();
    const Index channels = in.c();
    if (channels % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const Index per_group = channels / groups * in.plane();
    const Index n_stats = in.n() * groups;

    Tensor<Scalar> normalized(in.shape);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std(n_stats);
    for (Index s = 0; s < n_stats; ++s) {
        auto seg = in.data.segment(s * per_group, per_group);
        const Scalar mean = seg.mean();
        const Scalar var = (seg - mean).square().mean();
        inv_std[s] = Scalar(1) / std::sqrt(var + eps);
        normalized.data.segment(s * per_group, per_group) = (seg - mean) * inv_std[s];
    }
    Tensor<Scalar> out(in.shape);
    const Index plane = in.plane();
    for (Index i = 0; i < in.n(); ++i) {
        for (Index c = 0; c < channels; ++c) {
            const Index off = (i * channels + c) * plane;
            out.data.segment(off, plane) =
                normalized.data.segment(off, plane) * gamma.value().data[c] + beta.value().data[c];
        }
    }

    auto* px = detail::grad_target(x);
    auto* pg = detail::grad_target(gamma);
    auto* pb = detail::grad_target(beta);
    return make_result<Scalar>(
        std::move(out), {x, gamma, beta},
        [px, pg, pb, normalized = std::move(normalized), inv_std, groups, per_group](Node<Scalar>& self) {
            const Index n = normalized.n(), channels = normalized.c(), plane = normalized.plane();
            const auto& gam = self.parents[1]->value.data;
            Tensor<Scalar> dxhat(normalized.shape);
            for (Index i = 0; i < n; ++i) {
                for (Index c = 0; c < channels; ++c) {
                    const Index off = (i * channels + c) * plane;
                    auto dy = self.grad.data.segment(off, plane);
                    if (pg) pg->ensure_grad().data[c] += (dy * normalized.data.segment(off, plane)).sum();
                    if (pb) pb->ensure_grad().data[c] += dy.sum();
                    dxhat.data.segment(off, plane) = dy * gam[c];
                }
            }
            if (!px) return;
            auto& gx = px->ensure_grad();
            for (Index s = 0; s < n * groups; ++s) {
                auto dh = dxhat.data.segment(s * per_group, per_group);
                auto xh = normalized.data.segment(s * per_group, per_group);
                const Scalar mean_dh = dh.mean();
                const Scalar mean_dhx = (dh * xh).mean();
                gx.data.segment(s * per_group, per_group) += inv_std[s] * (dh - mean_dh - xh * mean_dhx);
            }
        });
}

/// h * (1 + scale) + shift with (scale, shift) = split of `ss` (N, 2C) broadcast over space.
template <typename Scalar>
Var<Scalar> modulate(const Var<Scalar>& h, const Var<Scalar>& ss) {
    const auto& in = h.value();
    const Index channels = in.c(), plane = in.plane();
    if (ss.value().n() != in.n() || ss.value().c() != 2 * channels) {
        throw std::invalid_argument("modulate: conditioning shape mismatch");
    }
    Tensor<Scalar> out(in.shape);
    for (Index i = 0; i < in.n(); ++i) {
        for (Index c = 0; c < channels; ++c) {
            const Index off = (i * channels + c) * plane;
            const Scalar sc = ss.value().at(i, c, 0, 0), sh = ss.value().at(i, channels + c, 0, 0);
            out.data.segment(off, plane) = in.data.segment(off, plane) * (Scalar(1) + sc) + sh;
        }
    }
    auto* ph = detail::grad_target(h);
    auto* ps = detail::grad_target(ss);
    return make_result<Scalar>(std::move(out), {h, ss}, [ph, ps, channels, plane](Node<Scalar>& self) {
        const auto& in = self.parents[0]->value;
        const auto& cond = self.parents[1]->value;
        for (Index i = 0; i < in.n(); ++i) {
            for (Index c = 0; c < channels; ++c) {
                const Index off = (i * channels + c) * plane;
                auto dy = self.grad.data.segment(off, plane);
                if (ph) ph->ensure_grad().data.segment(off, plane) += dy * (Scalar(1) + cond.at(i, c, 0, 0));
                if (ps) {
                    auto& gs = ps->ensure_grad();
                    gs.at(i, c, 0, 0) += (dy * in.data.segment(off, plane)).sum();
                    gs.at(i, channels + c, 0, 0) += dy.sum();
                }
            }
        }
    });
}

/// x (N, F) times weight (O, F) transposed, plus bias (1, O).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
    const auto& in = x.value();
    const auto& w = weight.value();
    const Index features = in.sample_size(), outputs = w.n();
    if (w.sample_size() != features) throw std::invalid_argument("linear: feature mismatch");
    Tensor<Scalar> out(in.n(), outputs);
    out.matrix().noalias() = in.matrix() * w.matrix().transpose();
    out.matrix().rowwise() += bias.value().data.matrix().transpose();
    auto* px = detail::grad_target(x);
    auto* pw = detail::grad_target(weight);
    auto* pb = detail::grad_target(bias);
    return make_result<Scalar>(std::move(out), {x, weight, bias}, [px, pw, pb](Node<Scalar>& self) {
        const auto dy = self.grad.matrix();
        if (pb) pb->ensure_grad().matrix() += dy.colwise().sum();
        if (pw) pw->ensure_grad().matrix().noalias() += dy.transpose() * self.parents[0]->value.matrix();
        if (px) px->ensure_grad().matrix().noalias() += dy * self.parents[1]->value.matrix();
    });
}

/// Feature-wise concatenation of (N, F1) and (N, F2).
template <typename Scalar>
Var<Scalar> concat_features(const Var<Scalar>& a, const Var<Scalar>& b) {
    const Index n = a.value().n(), fa = a.value().sample_size(), fb = b.value().sample_size();
    if (b.value().n() != n) throw std::invalid_argument("concat_features: batch mismatch");
    Tensor<Scalar> out(n, fa + fb);
    out.matrix().leftCols(fa) = a.value().matrix();
    out.matrix().rightCols(fb) = b.value().matrix();
    auto* pa = detail::grad_target(a);
    auto* pb = detail::grad_target(b);
    return make_result<Scalar>(std::move(out), {a, b}, [pa, pb, fa, fb](Node<Scalar>& self) {
        if (pa) pa->ensure_grad().matrix() += self.grad.matrix().leftCols(fa);
        if (pb) pb->ensure_grad().matrix() += self.grad.matrix().rightCols(fb);
    });
}

template <typename Scalar>
Var<Scalar> flatten(const Var<Scalar>& x) {
    Tensor<Scalar> out(x.value().n(), x.value().sample_size());
    out.data = x.value().data;
    auto* px = detail::grad_target(x);
    return make_result<Scalar>(std::move(out), {x}, [px](Node<Scalar>& self) {
        px->ensure_grad().data += self.grad.data;
    });
}

/// Rows of x (N, ...) selected by index.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, const std::vector<Index>& rows) {
    const auto& in = x.value();
    auto shape = in.shape;
    shape[0] = static_cast<Index>(rows.size());
    Tensor<Scalar> out(shape);
    for (std::size_t r = 0; r < rows.size(); ++r) out.matrix().row(r) = in.matrix().row(rows[r]);
    auto* px = detail::grad_target(x);
    return make_result<Scalar>(std::move(out), {x}, [px, rows](Node<Scalar>& self) {
        auto& gx = px->ensure_grad();
        for (std::size_t r = 0; r < rows.size(); ++r) gx.matrix().row(rows[r]) += self.grad.matrix().row(r);
    });
}

/// Nearest-neighbour resampling to an explicit spatial size.
template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, Index out_h, Index out_w) {
    const auto& in = x.value();
    std::vector<Index> src_y(out_h), src_x(out_w);
    for (Index y = 0; y < out_h; ++y) src_y[y] = y * in.h() / out_h;
    for (Index xx = 0; xx < out_w; ++xx) src_x[xx] = xx * in.w() / out_w;
    Tensor<Scalar> out(in.n(), in.c(), out_h, out_w);
    for (Index i = 0; i < in.n(); ++i)
        for (Index c = 0; c < in.c(); ++c)
            for (Index y = 0; y < out_h; ++y)
                for (Index xx = 0; xx < out_w; ++xx) out.at(i, c, y, xx) = in.at(i, c, src_y[y], src_x[xx]);
    auto* px = detail::grad_target(x);
    return make_result<Scalar>(std::move(out), {x}, [px, src_y, src_x](Node<Scalar>& self) {
        auto& gx = px->ensure_grad();
        const auto& g = self.grad;
        for (Index i = 0; i < g.n(); ++i)
            for (Index c = 0; c < g.c(); ++c)
                for (Index y = 0; y < g.h(); ++y)
                    for (Index xx = 0; xx < g.w(); ++xx) gx.at(i, c, src_y[y], src_x[xx]) += g.at(i, c, y, xx);
    });
}

/// Single-head self-attention over spatial positions. qkv_weight (3C, C),
/// qkv_bias (1, 3C), out_weight (C, C), out_bias (1, C).
template <typename Scalar>
Var<Scalar> self_attention(const Var<Scalar>& x, const Var<Scalar>& qkv_weight, const Var<Scalar>& qkv_bias,
                           const Var<Scalar>& out_weight, const Var<Scalar>& out_bias) {
    const auto& in = x.value();
    const Index n = in.n(), channels = in.c(), tokens = in.plane();
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(Scalar(channels));
    ConstMatrixMap<Scalar> wqkv(qkv_weight.value().data.data(), 3 * channels, channels);
    ConstMatrixMap<Scalar> wo(out_weight.value().data.data(), channels, channels);
    const auto bqkv = qkv_bias.value().data.matrix().transpose();
    const auto bo = out_bias.value().data.matrix().transpose();

    struct Saved {
        RowMatrix<Scalar> qkv, probs, attended;
    };
    auto saved = std::make_shared<std::vector<Saved>>(n);
    Tensor<Scalar> out(in.shape);
    for (Index i = 0; i < n; ++i) {
        auto& s = (*saved)[i];
        const RowMatrix<Scalar> tokens_in = in.sample_matrix(i).transpose();
        s.qkv.noalias() = tokens_in * wqkv.transpose();
        s.qkv.rowwise() += bqkv;
        RowMatrix<Scalar> scores = s.qkv.leftCols(channels) * s.qkv.middleCols(channels, channels).transpose();
        scores *= inv_sqrt;
        for (Index r = 0; r < tokens; ++r) {
            auto row = scores.row(r).array();
            row = (row - row.maxCoeff()).exp();
            row /= row.sum();
        }
        s.probs = std::move(scores);
        s.attended.noalias() = s.probs * s.qkv.rightCols(channels);
        RowMatrix<Scalar> y = s.attended * wo.transpose();
        y.rowwise() += bo;
        out.sample_matrix(i) = y.transpose();
    }

    auto* px = detail::grad_target(x);
    auto* pwq = detail::grad_target(qkv_weight);
    auto* pbq = detail::grad_target(qkv_bias);
    auto* pwo = detail::grad_target(out_weight);
    auto* pbo = detail::grad_target(out_bias);
    return make_result<Scalar>(
        std::move(out), {x, qkv_weight, qkv_bias, out_weight, out_bias},
        [=](Node<Scalar>& self) {
            const auto& in = self.parents[0]->value;
            ConstMatrixMap<Scalar> wqkv(self.parents[1]->value.data.data(), 3 * channels, channels);
            ConstMatrixMap<Scalar> wo(self.parents[3]->value.data.data(), channels, channels);
            for (Index i = 0; i < n; ++i) {
                const auto& s = (*saved)[i];
                const RowMatrix<Scalar> dy = ConstMatrixMap<Scalar>(self.grad.sample(i), channels, tokens).transpose();
                if (pbo) pbo->ensure_grad().matrix() += dy.colwise().sum();
                if (pwo) {
                    MatrixMap<Scalar>(pwo->ensure_grad().data.data(), channels, channels).noalias() +=
                        dy.transpose() * s.attended;
                }
                const RowMatrix<Scalar> d_att = dy * wo;
                RowMatrix<Scalar> dqkv(tokens, 3 * channels);
                dqkv.rightCols(channels).noalias() = s.probs.transpose() * d_att;
                RowMatrix<Scalar> dprobs = d_att * s.qkv.rightCols(channels).transpose();
                const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = (dprobs.array() * s.probs.array()).rowwise().sum();
                RowMatrix<Scalar> dscores = (s.probs.array() * (dprobs.array().colwise() - row_dot.array())).matrix();
                dscores *= inv_sqrt;
                dqkv.leftCols(channels).noalias() = dscores * s.qkv.middleCols(channels, channels);
                dqkv.middleCols(channels, channels).noalias() = dscores.transpose() * s.qkv.leftCols(channels);
                if (pbq) pbq->ensure_grad().matrix() += dqkv.colwise().sum();
                if (pwq) {
                    MatrixMap<Scalar>(pwq->ensure_grad().data.data(), 3 * channels, channels).noalias() +=
                        dqkv.transpose() * in.sample_matrix(i).transpose();
                }
                if (px) px->ensure_grad().sample_matrix(i).noalias() += (dqkv * wqkv).transpose();
            }
        });
}

/// Running statistics for batch normalization; updated only by training-mode passes.
template <typename Scalar>
struct BatchNormStats {
    Eigen::Array<Scalar, Eigen::Dynamic, 1> running_mean;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> running_var;
    Scalar momentum = Scalar(0.1);
};

/// Batch normalization over (N, F). In training mode uses batch statistics
/// and updates `stats`; in evaluation mode uses the running statistics.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormStats<Scalar>& stats, bool training, Scalar eps = Scalar(1e-5)) {
    const auto& in = x.value();
    const Index n = in.n(), features = in.sample_size();
    using Row = Eigen::Array<Scalar, 1, Eigen::Dynamic>;
    Row mean, inv_std;
    if (training) {
        mean = in.matrix().colwise().mean().array();
        const Row var = (in.matrix().array().rowwise() - mean).square().colwise().mean();
        inv_std = (var + eps).rsqrt();
        const Scalar unbias = n > 1 ? Scalar(n) / Scalar(n - 1) : Scalar(1);
        stats.running_mean = (Scalar(1) - stats.momentum) * stats.running_mean + stats.momentum * mean.transpose();
        stats.running_var =
            (Scalar(1) - stats.momentum) * stats.running_var + stats.momentum * unbias * var.transpose();
    } else {
        mean = stats.running_mean.transpose();
        inv_std = (stats.running_var.transpose() + eps).rsqrt();
    }
    Tensor<Scalar> normalized(in.shape);
    normalized.matrix() = ((in.matrix().array().rowwise() - mean).rowwise() * inv_std).matrix();
    Tensor<Scalar> out(in.shape);
    out.matrix() = ((normalized.matrix().array().rowwise() * gamma.value().data.transpose()).rowwise() +
                    beta.value().data.transpose())
                       .matrix();
    (void)features;

    auto* px = detail::grad_target(x);
    auto* pg = detail::grad_target(gamma);
    auto* pb = detail::grad_target(beta);
    return make_result<Scalar>(
        std::move(out), {x, gamma, beta},
        [px, pg, pb, normalized = std::move(normalized), inv_std, training](Node<Scalar>& self) {
            const auto dy = self.grad.matrix().array();
            const auto xh = normalized.matrix().array();
            if (pg) pg->ensure_grad().data += (dy * xh).colwise().sum().transpose();
            if (pb) pb->ensure_grad().data += dy.colwise().sum().transpose();
            if (!px) return;
            const auto& gam = self.parents[1]->value.data;
            const RowMatrix<Scalar> dxh = (dy.rowwise() * gam.transpose()).matrix();
            auto gx = px->ensure_grad().matrix();
            if (!training) {
                gx += (dxh.array().rowwise() * inv_std).matrix();
                return;
            }
            const Eigen::Array<Scalar, 1, Eigen::Dynamic> m1 = dxh.array().colwise().mean();
            const Eigen::Array<Scalar, 1, Eigen::Dynamic> m2 = (dxh.array() * xh).colwise().mean();
            gx += (((dxh.array().rowwise() - m1) - (xh.rowwise() * m2)).rowwise() * inv_std).matrix();
        });
}

/// Inverted dropout; keep mask drawn from the caller's generator.
template <typename Scalar, typename Rng>
Var<Scalar> dropout(const Var<Scalar>& x, Scalar p, Rng& rng) {
    if (p <= Scalar(0)) return x;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    Tensor<Scalar> mask(x.shape());
    const Scalar kept = Scalar(1) / (Scalar(1) - p);
    for (Index i = 0; i < mask.size(); ++i) mask.data[i] = keep(rng) ? kept : Scalar(0);
    Tensor<Scalar> out(x.shape());
    out.data = x.value().data * mask.data;
    auto* px = detail::grad_target(x);
    return make_result<Scalar>(std::move(out), {x}, [px, mask = std::move(mask)](Node<Scalar>& self) {
        px->ensure_grad().data += self.grad.data * mask.data;
    });
}

/// Batch mean of the per-sample squared L2 distance to a constant target.
template <typename Scalar>
Var<Scalar> sum_squared_error_mean(const Var<Scalar>& pred, const Tensor<Scalar>& target) {
    require_same_shape(pred.value(), target, "sum_squared_error_mean");
    const Index n = pred.value().n();
    Tensor<Scalar> out(1, 1);
    out.data[0] = (pred.value().data - target.data).square().sum() / Scalar(n);
    auto* pp = detail::grad_target(pred);
    return make_result<Scalar>(std::move(out), {pred}, [pp, target, n](Node<Scalar>& self) {
        pp->ensure_grad().data += (Scalar(2) * self.grad.data[0] / Scalar(n)) * (pp->value.data - target.data);
    });
}

/// Mean over (N, 1) of ((pred - target) / spread)^2.
template <typename Scalar>
Var<Scalar> scaled_mse(const Var<Scalar>& pred, const Eigen::Array<Scalar, Eigen::Dynamic, 1>& target, Scalar spread) {
    if (pred.value().size() != target.size()) throw std::invalid_argument("scaled_mse: length mismatch");
    const Index n = target.size();
    Tensor<Scalar> out(1, 1);
    out.data[0] = ((pred.value().data - target) / spread).square().sum() / Scalar(n);
    auto* pp = detail::grad_target(pred);
    return make_result<Scalar>(std::move(out), {pred}, [pp, target, spread, n](Node<Scalar>& self) {
        pp->ensure_grad().data +=
            (Scalar(2) * self.grad.data[0] / (Scalar(n) * spread * spread)) * (pp->value.data - target);
    });
}

}  // namespace diffage::ops
