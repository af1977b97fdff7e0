// SPDX-License-Identifier: Apache-2.0
//
// radioloc: urban radio-map localization benchmark
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

// Layer set of the localization network, each with forward and backward:
// conv2d (stride 1, same padding), avgpool2, bilinear upsample2, channel concat, activations,
// spatial softmax, center-of-mass readout, and the AED / ASED / MSE losses.

#include "radioloc/errors.hpp"
#include "radioloc/grid.hpp"
#include "radioloc/nn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace radioloc::nn
{

namespace detail
{

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Padding before the first row/col for a same-size output; even kernels pad one more on the top/left.
inline int pad_before(int k) { return k / 2; }

// cols[(ci*k + ki)*k + kj][y*W + x] = x[ci][y + ki - pad][x + kj - pad] (zero outside).
template <class T>
void im2col(const T *x, int C, int H, int W, int k, T *cols)
{
    const int pb = pad_before(k);
    const std::size_t hw = std::size_t(H) * W;
    for (int ci = 0; ci < C; ++ci)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj)
            {
                T *row = cols + (std::size_t(ci * k + ki) * k + kj) * hw;
                const T *src = x + std::size_t(ci) * hw;
                for (int y = 0; y < H; ++y)
                {
                    const int sy = y + ki - pb;
                    T *dst = row + std::size_t(y) * W;
                    if (sy < 0 || sy >= H)
                    {
                        std::fill(dst, dst + W, T(0));
                        continue;
                    }
                    const int x0 = std::max(0, pb - kj), x1 = std::min(W, W + pb - kj);
                    std::fill(dst, dst + x0, T(0));
                    std::copy(src + std::size_t(sy) * W + (x0 + kj - pb), src + std::size_t(sy) * W + (x1 + kj - pb),
                              dst + x0);
                    std::fill(dst + x1, dst + W, T(0));
                }
            }
}

template <class T>
void col2im_add(const T *cols, int C, int H, int W, int k, T *dx)
{
    const int pb = pad_before(k);
    const std::size_t hw = std::size_t(H) * W;
    for (int ci = 0; ci < C; ++ci)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj)
            {
                const T *row = cols + (std::size_t(ci * k + ki) * k + kj) * hw;
                T *dst = dx + std::size_t(ci) * hw;
                for (int y = 0; y < H; ++y)
                {
                    const int sy = y + ki - pb;
                    if (sy < 0 || sy >= H)
                        continue;
                    const int x0 = std::max(0, pb - kj), x1 = std::min(W, W + pb - kj);
                    const T *src = row + std::size_t(y) * W;
                    T *d = dst + std::size_t(sy) * W + (kj - pb);
                    for (int xx = x0; xx < x1; ++xx)
                        d[xx] += src[xx];
                }
            }
}

// Per-axis bilinear taps for factor-2 upsampling with half-pixel centers.
struct Taps
{
    std::vector<int> i0, i1;
    std::vector<double> w0, w1;
};

inline Taps upsample_taps(int in)
{
    Taps t;
    for (int o = 0; o < 2 * in; ++o)
    {
        const int i = o / 2;
        const int other = (o % 2 == 0) ? std::max(i - 1, 0) : std::min(i + 1, in - 1);
        t.i0.push_back(i);
        t.i1.push_back(other);
        t.w0.push_back(0.75);
        t.w1.push_back(0.25);
    }
    return t;
}

} // namespace detail

// Cross-correlation with zero padding; w is [Cout, Cin, k, k], b is [1, Cout, 1, 1].
template <class T>
Tensor<T> conv2d(const Tensor<T> &x, const Tensor<T> &w, const Tensor<T> &b)
{
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != C || w.dim(3) != k)
        throw std::invalid_argument("conv2d: weight " + shape_str(w.shape()) + " does not fit input " +
                                    shape_str(x.shape()));
    if (b.size() != std::size_t(Co))
        throw std::invalid_argument("conv2d: bias length does not match output channels");
    auto out = make_output<T>({N, Co, H, W}, {x.node(), w.node(), b.node()});
    const std::size_t hw = std::size_t(H) * W, kk = std::size_t(C) * k * k;
    std::vector<T> cols(kk * hw);
    using M = detail::RowMat<T>;
    Eigen::Map<const M> Wm(w.value().data(), Co, Eigen::Index(kk));
    for (int n = 0; n < N; ++n)
    {
        detail::im2col(x.value().data() + std::size_t(n) * C * hw, C, H, W, k, cols.data());
        Eigen::Map<const M> Cm(cols.data(), Eigen::Index(kk), Eigen::Index(hw));
        Eigen::Map<M> Om(out->value.data() + std::size_t(n) * Co * hw, Co, Eigen::Index(hw));
        Om.noalias() = Wm * Cm;
        for (int co = 0; co < Co; ++co)
            Om.row(co).array() += b.value()[std::size_t(co)];
    }
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *xn = x.node().get(), *wn = w.node().get(), *bn = b.node().get();
        out->backward_fn = [o, xn, wn, bn, N, C, H, W, Co, k, hw, kk] {
            std::vector<T> cols(kk * hw), dcols(kk * hw);
            Eigen::Map<const M> Wm(wn->value.data(), Co, Eigen::Index(kk));
            for (int n = 0; n < N; ++n)
            {
                Eigen::Map<const M> G(o->grad.data() + std::size_t(n) * Co * hw, Co, Eigen::Index(hw));
                if (wn->requires_grad || xn->requires_grad)
                    detail::im2col(xn->value.data() + std::size_t(n) * C * hw, C, H, W, k, cols.data());
                if (wn->requires_grad)
                {
                    Eigen::Map<const M> Cm(cols.data(), Eigen::Index(kk), Eigen::Index(hw));
                    Eigen::Map<M> dW(wn->grad.data(), Co, Eigen::Index(kk));
                    dW.noalias() += G * Cm.transpose();
                }
                if (bn->requires_grad)
                    for (int co = 0; co < Co; ++co)
                        bn->grad[std::size_t(co)] += G.row(co).sum();
                if (xn->requires_grad)
                {
                    Eigen::Map<M> dC(dcols.data(), Eigen::Index(kk), Eigen::Index(hw));
                    dC.noalias() = Wm.transpose() * G;
                    detail::col2im_add(dcols.data(), C, H, W, k, xn->grad.data() + std::size_t(n) * C * hw);
                }
            }
        };
    }
    return Tensor<T>(out);
}

template <class T>
Tensor<T> avgpool2(const Tensor<T> &x)
{
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("avgpool2: spatial dimensions must be even, got " + shape_str(x.shape()));
    const int h = H / 2, w = W / 2;
    auto out = make_output<T>({N, C, h, w}, {x.node()});
    const auto &xv = x.value();
    for (int nc = 0; nc < N * C; ++nc)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
            {
                const std::size_t base = (std::size_t(nc) * H + 2 * i) * W + 2 * j;
                out->value[(std::size_t(nc) * h + i) * w + j] =
                    T(0.25) * (xv[base] + xv[base + 1] + xv[base + W] + xv[base + W + 1]);
            }
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *xn = x.node().get();
        out->backward_fn = [o, xn, N, C, H, W, h, w] {
            for (int nc = 0; nc < N * C; ++nc)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                    {
                        const T g = T(0.25) * o->grad[(std::size_t(nc) * h + i) * w + j];
                        const std::size_t base = (std::size_t(nc) * H + 2 * i) * W + 2 * j;
                        xn->grad[base] += g;
                        xn->grad[base + 1] += g;
                        xn->grad[base + W] += g;
                        xn->grad[base + W + 1] += g;
                    }
        };
    }
    return Tensor<T>(out);
}

// Factor-2 bilinear upsampling: even outputs mix 0.75 of pixel i with 0.25 of i-1, odd outputs
// 0.75 of i with 0.25 of i+1, indices clamped at the border.
template <class T>
Tensor<T> upsample2(const Tensor<T> &x)
{
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = 2 * H, OW = 2 * W;
    auto out = make_output<T>({N, C, OH, OW}, {x.node()});
    const auto ty = detail::upsample_taps(H), tx = detail::upsample_taps(W);
    const auto &xv = x.value();
    for (int nc = 0; nc < N * C; ++nc)
    {
        const T *src = xv.data() + std::size_t(nc) * H * W;
        T *dst = out->value.data() + std::size_t(nc) * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox)
            {
                const T a = T(tx.w0[ox]) * src[ty.i0[oy] * W + tx.i0[ox]] + T(tx.w1[ox]) * src[ty.i0[oy] * W + tx.i1[ox]];
                const T c = T(tx.w0[ox]) * src[ty.i1[oy] * W + tx.i0[ox]] + T(tx.w1[ox]) * src[ty.i1[oy] * W + tx.i1[ox]];
                dst[oy * OW + ox] = T(ty.w0[oy]) * a + T(ty.w1[oy]) * c;
            }
    }
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *xn = x.node().get();
        out->backward_fn = [o, xn, N, C, H, W, OH, OW, ty, tx] {
            for (int nc = 0; nc < N * C; ++nc)
            {
                const T *g = o->grad.data() + std::size_t(nc) * OH * OW;
                T *dx = xn->grad.data() + std::size_t(nc) * H * W;
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox)
                    {
                        const T v = g[oy * OW + ox];
                        const T a = T(ty.w0[oy]) * v, c = T(ty.w1[oy]) * v;
                        dx[ty.i0[oy] * W + tx.i0[ox]] += T(tx.w0[ox]) * a;
                        dx[ty.i0[oy] * W + tx.i1[ox]] += T(tx.w1[ox]) * a;
                        dx[ty.i1[oy] * W + tx.i0[ox]] += T(tx.w0[ox]) * c;
                        dx[ty.i1[oy] * W + tx.i1[ox]] += T(tx.w1[ox]) * c;
                    }
            }
        };
    }
    return Tensor<T>(out);
}

// Channel concatenation; all inputs share N, H, W.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>> &xs)
{
    if (xs.empty())
        throw std::invalid_argument("concat: no inputs");
    const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int C = 0;
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto &x : xs)
    {
        if (x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
            throw std::invalid_argument("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                                        shape_str(xs[0].shape()));
        C += x.dim(1);
        nodes.push_back(x.node());
    }
    auto out = make_output<T>({N, C, H, W}, nodes);
    const std::size_t hw = std::size_t(H) * W;
    for (int n = 0; n < N; ++n)
    {
        std::size_t c0 = 0;
        for (const auto &x : xs)
        {
            const std::size_t len = std::size_t(x.dim(1)) * hw;
            std::copy_n(x.value().data() + n * len, len, out->value.data() + (std::size_t(n) * C) * hw + c0 * hw);
            c0 += std::size_t(x.dim(1));
        }
    }
    if (out->requires_grad)
    {
        auto *o = out.get();
        std::vector<Node<T> *> raw;
        for (auto &p : nodes)
            raw.push_back(p.get());
        out->backward_fn = [o, raw, N, C, hw] {
            for (int n = 0; n < N; ++n)
            {
                std::size_t c0 = 0;
                for (auto *p : raw)
                {
                    const std::size_t len = std::size_t(p->shape[1]) * hw;
                    if (p->requires_grad)
                    {
                        const T *g = o->grad.data() + (std::size_t(n) * C + c0) * hw;
                        T *d = p->grad.data() + n * len;
                        for (std::size_t i = 0; i < len; ++i)
                            d[i] += g[i];
                    }
                    c0 += std::size_t(p->shape[1]);
                }
            }
        };
    }
    return Tensor<T>(out);
}

namespace detail
{

// Element-wise op given f(x) and f'(x, y) with y = f(x).
template <class T, class F, class DF>
Tensor<T> elementwise(const Tensor<T> &x, F f, DF df)
{
    auto out = make_output<T>(x.shape(), {x.node()});
    for (std::size_t i = 0; i < x.size(); ++i)
        out->value[i] = f(x.value()[i]);
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *xn = x.node().get();
        out->backward_fn = [o, xn, df] {
            for (std::size_t i = 0; i < o->value.size(); ++i)
                xn->grad[i] += o->grad[i] * df(xn->value[i], o->value[i]);
        };
    }
    return Tensor<T>(out);
}

} // namespace detail

template <class T>
Tensor<T> leaky_relu(const Tensor<T> &x, double slope = 0.2)
{
    const T s = T(slope);
    return detail::elementwise(
        x, [s](T v) { return v > 0 ? v : s * v; }, [s](T v, T) { return v > 0 ? T(1) : s; });
}

template <class T>
Tensor<T> relu(const Tensor<T> &x)
{
    return detail::elementwise(
        x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T> &x)
{
    return detail::elementwise(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

// Softmax over the H*W plane of every (n, c).
template <class T>
Tensor<T> softmax2d(const Tensor<T> &x)
{
    const int NC = x.dim(0) * x.dim(1);
    const std::size_t hw = std::size_t(x.dim(2)) * x.dim(3);
    auto out = make_output<T>(x.shape(), {x.node()});
    for (int p = 0; p < NC; ++p)
    {
        const T *src = x.value().data() + p * hw;
        T *dst = out->value.data() + p * hw;
        const T mx = *std::max_element(src, src + hw);
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i)
            s += (dst[i] = std::exp(src[i] - mx));
        for (std::size_t i = 0; i < hw; ++i)
            dst[i] /= s;
    }
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *xn = x.node().get();
        out->backward_fn = [o, xn, NC, hw] {
            for (int p = 0; p < NC; ++p)
            {
                const T *y = o->value.data() + p * hw;
                const T *g = o->grad.data() + p * hw;
                T dot = 0;
                for (std::size_t i = 0; i < hw; ++i)
                    dot += y[i] * g[i];
                T *d = xn->grad.data() + p * hw;
                for (std::size_t i = 0; i < hw; ++i)
                    d[i] += y[i] * (g[i] - dot);
            }
        };
    }
    return Tensor<T>(out);
}

enum class Activation
{
    LeakyRelu,
    Relu,
    Softmax,
    Sigmoid,
};

template <class T>
Tensor<T> activate(const Tensor<T> &x, Activation a)
{
    switch (a)
    {
    case Activation::LeakyRelu:
        return leaky_relu(x);
    case Activation::Relu:
        return relu(x);
    case Activation::Softmax:
        return softmax2d(x);
    case Activation::Sigmoid:
        return sigmoid(x);
    }
    return x;
}

inline constexpr double degenerate_mass = 1e-12;

// Center of mass of each N x 1 x h x w heatmap, returned as [N, 2, 1, 1] = (mu_x, mu_y) with
// x = col + 1 and y = row + 1. With `valid` given, a heatmap whose mass is below 1e-12 in magnitude is
// flagged instead of raising and its output is zero with no gradient.
template <class T>
Tensor<T> com_readout(const Tensor<T> &h, std::vector<std::uint8_t> *valid = nullptr)
{
    if (h.dim(1) != 1)
        throw std::invalid_argument("com_readout: expected one channel, got " + shape_str(h.shape()));
    const int N = h.dim(0), H = h.dim(2), W = h.dim(3);
    auto out = make_output<T>({N, 2, 1, 1}, {h.node()});
    std::vector<double> mass(std::size_t(N), 0.0);
    std::vector<std::uint8_t> ok(std::size_t(N), 1);
    for (int n = 0; n < N; ++n)
    {
        const T *p = h.value().data() + std::size_t(n) * H * W;
        double s = 0, sx = 0, sy = 0;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
            {
                const double v = p[r * W + c];
                s += v;
                sx += v * (c + 1);
                sy += v * (r + 1);
            }
        mass[std::size_t(n)] = s;
        if (!(std::abs(s) >= degenerate_mass))
        {
            if (!valid)
                throw DegenerateHeatmapError("com_readout: heatmap mass is numerically zero");
            ok[std::size_t(n)] = 0;
            continue;
        }
        out->value[std::size_t(2 * n)] = T(sx / s);
        out->value[std::size_t(2 * n + 1)] = T(sy / s);
    }
    if (valid)
        *valid = ok;
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *hn = h.node().get();
        out->backward_fn = [o, hn, N, H, W, mass, ok] {
            for (int n = 0; n < N; ++n)
            {
                if (!ok[std::size_t(n)])
                    continue;
                const double s = mass[std::size_t(n)];
                const double mx = o->value[std::size_t(2 * n)], my = o->value[std::size_t(2 * n + 1)];
                const double gx = o->grad[std::size_t(2 * n)], gy = o->grad[std::size_t(2 * n + 1)];
                T *d = hn->grad.data() + std::size_t(n) * H * W;
                for (int r = 0; r < H; ++r)
                    for (int c = 0; c < W; ++c)
                        d[r * W + c] += T((gx * (c + 1 - mx) + gy * (r + 1 - my)) / s);
            }
        };
    }
    return Tensor<T>(out);
}

namespace detail
{

template <class T, class Loss, class Grad>
Tensor<T> point_loss(const Tensor<T> &pred, const std::vector<Position> &truth, const std::vector<std::uint8_t> *mask,
                     Loss loss, Grad grad, const char *name)
{
    const int N = pred.dim(0);
    if (pred.dim(1) != 2 || std::size_t(N) != truth.size())
        throw std::invalid_argument(std::string(name) + ": prediction " + shape_str(pred.shape()) +
                                    " does not match the truth list");
    std::vector<std::uint8_t> use(std::size_t(N), 1);
    if (mask)
        use = *mask;
    const auto count = std::count(use.begin(), use.end(), std::uint8_t(1));
    if (count == 0)
        throw std::invalid_argument(std::string(name) + ": empty batch");
    auto out = make_output<T>({1, 1, 1, 1}, {pred.node()});
    double s = 0;
    for (int n = 0; n < N; ++n)
        if (use[std::size_t(n)])
        {
            const double dx = pred.value()[std::size_t(2 * n)] - truth[std::size_t(n)].x;
            const double dy = pred.value()[std::size_t(2 * n + 1)] - truth[std::size_t(n)].y;
            s += loss(dx, dy);
        }
    out->value[0] = T(s / double(count));
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *pn = pred.node().get();
        out->backward_fn = [o, pn, truth, use, count, grad, N] {
            const double g = o->grad[0] / double(count);
            for (int n = 0; n < N; ++n)
                if (use[std::size_t(n)])
                {
                    const double dx = pn->value[std::size_t(2 * n)] - truth[std::size_t(n)].x;
                    const double dy = pn->value[std::size_t(2 * n + 1)] - truth[std::size_t(n)].y;
                    const auto [gx, gy] = grad(dx, dy);
                    pn->grad[std::size_t(2 * n)] += T(g * gx);
                    pn->grad[std::size_t(2 * n + 1)] += T(g * gy);
                }
        };
    }
    return Tensor<T>(out);
}

} // namespace detail

// Mean Euclidean distance. The gradient at zero distance is taken as zero.
template <class T>
Tensor<T> aed_loss(const Tensor<T> &pred, const std::vector<Position> &truth, const std::vector<std::uint8_t> *mask = nullptr)
{
    return detail::point_loss(
        pred, truth, mask, [](double dx, double dy) { return std::hypot(dx, dy); },
        [](double dx, double dy) {
            const double d = std::hypot(dx, dy);
            return d > 0 ? std::pair{dx / d, dy / d} : std::pair{0.0, 0.0};
        },
        "aed_loss");
}

// Mean squared Euclidean distance.
template <class T>
Tensor<T> ased_loss(const Tensor<T> &pred, const std::vector<Position> &truth, const std::vector<std::uint8_t> *mask = nullptr)
{
    return detail::point_loss(
        pred, truth, mask, [](double dx, double dy) { return dx * dx + dy * dy; },
        [](double dx, double dy) { return std::pair{2 * dx, 2 * dy}; }, "ased_loss");
}

// Mean squared error against a fixed target of the same shape.
template <class T>
Tensor<T> mse_loss(const Tensor<T> &x, const std::vector<T> &target)
{
    if (target.size() != x.size())
        throw std::invalid_argument("mse_loss: target size mismatch");
    auto out = make_output<T>({1, 1, 1, 1}, {x.node()});
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        const double d = double(x.value()[i]) - double(target[i]);
        s += d * d;
    }
    const double n = double(x.size());
    out->value[0] = T(s / n);
    if (out->requires_grad)
    {
        auto *o = out.get();
        auto *xn = x.node().get();
        out->backward_fn = [o, xn, target, n] {
            const T g = T(2.0 * o->grad[0] / n);
            for (std::size_t i = 0; i < xn->value.size(); ++i)
                xn->grad[i] += g * (xn->value[i] - target[i]);
        };
    }
    return Tensor<T>(out);
}

} // namespace radioloc::nn
