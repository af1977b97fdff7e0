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

// Finite-difference checks for every differentiable op, shared by the unit tests and the acceptance run.

#include "oracles.hpp"

#include "radioloc/locnet.hpp"
#include "radioloc/nn/ops.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace gradcheck
{

using namespace radioloc;
using nn::Tensor;

// Values in +-[margin, 1]: away from the kinks of relu and leaky relu.
inline Tensor<double> random_tensor(nn::Shape s, std::mt19937_64 &rng, double margin = 0.05)
{
    std::uniform_real_distribution<double> u(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(nn::numel(s));
    for (auto &x : v)
        x = sign(rng) ? u(rng) : -u(rng);
    return Tensor<double>::from(s, std::move(v), true);
}

// Worst relative error of the analytic gradient of `loss` over all `leaves`.
// Entries are compared relative to max(|analytic|, |numeric|, 1e-3 * largest |numeric| of that leaf,
// 1e-6 * largest |numeric| overall) so that gradients that are zero up to rounding do not dominate.
// An entry that disagrees is differenced again with a 100x smaller step: a step that crosses a relu
// kink is wrong at one step size only, a wrong analytic gradient at both.
inline double check(std::vector<Tensor<double>> leaves, const std::function<Tensor<double>()> &loss, double eps)
{
    for (auto &l : leaves)
        l.zero_grad();
    nn::backward(loss());
    const auto f = [&] { return loss().value()[0]; };
    std::vector<std::vector<double>> numeric;
    double global = 0.0;
    for (auto &l : leaves)
    {
        numeric.push_back(oracle::fd_gradient(l.value(), f, eps));
        for (double g : numeric.back())
            global = std::max(global, std::abs(g));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < leaves.size(); ++k)
    {
        const auto analytic = leaves[k].grad();
        auto &v = leaves[k].value();
        double scale = 0.0;
        for (double g : numeric[k])
            scale = std::max(scale, std::abs(g));
        const double floor = std::max({1e-3 * scale, 1e-6 * global, 1e-12});
        for (std::size_t i = 0; i < v.size(); ++i)
        {
            auto rel = [&](double n) {
                return std::abs(analytic[i] - n) / std::max({std::abs(analytic[i]), std::abs(n), floor});
            };
            double e = rel(numeric[k][i]);
            if (e > 1e-6)
            {
                const double keep = v[i], h = eps * 1e-2;
                v[i] = keep + h;
                const double fp = f();
                v[i] = keep - h;
                const double fm = f();
                v[i] = keep;
                e = std::min(e, rel((fp - fm) / (2.0 * h)));
            }
            worst = std::max(worst, e);
        }
    }
    return worst;
}

// Projects an output onto a fixed random target so every element contributes to the scalar.
inline std::function<Tensor<double>()> through_mse(const std::function<Tensor<double>()> &f, std::mt19937_64 &rng)
{
    const auto probe = f();
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> target(probe.size());
    for (auto &t : target)
        t = n(rng);
    return [f, target] { return nn::mse_loss(f(), target); };
}

struct Case
{
    std::string name;
    double worst = 0.0;
    double tolerance = 1e-4;
};

// One finite-difference run of every layer for a given seed.
inline std::vector<Case> all_layers(std::uint64_t seed, double eps = 1e-5)
{
    std::mt19937_64 rng(seed);
    std::vector<Case> out;
    auto run = [&](const std::string &name, std::vector<Tensor<double>> leaves, std::function<Tensor<double>()> f,
                   double tol = 1e-4) { out.push_back({name, check(std::move(leaves), through_mse(f, rng), eps), tol}); };

    for (int k : {1, 3, 4, 5})
    {
        auto x = random_tensor({2, 3, 8, 8}, rng);
        auto w = random_tensor({4, 3, k, k}, rng);
        auto b = random_tensor({1, 4, 1, 1}, rng);
        run("conv" + std::to_string(k), {x, w, b}, [=] { return nn::conv2d(x, w, b); });
    }
    {
        auto x = random_tensor({2, 3, 8, 6}, rng);
        run("avgpool2", {x}, [=] { return nn::avgpool2(x); });
        run("upsample2", {x}, [=] { return nn::upsample2(x); });
        auto y = random_tensor({2, 2, 8, 6}, rng);
        run("concat", {x, y}, [=] { return nn::concat<double>({x, y}); });
        run("leaky_relu", {x}, [=] { return nn::leaky_relu(x, 0.2); });
        run("relu", {x}, [=] { return nn::relu(x); });
        run("sigmoid", {x}, [=] { return nn::sigmoid(x); });
        run("softmax2d", {x}, [=] { return nn::softmax2d(x); });
    }
    {
        // positive heatmaps keep the mass away from zero
        std::uniform_real_distribution<double> u(0.1, 1.0);
        std::vector<double> v(2 * 8 * 8);
        for (auto &e : v)
            e = u(rng);
        auto h = Tensor<double>::from({2, 1, 8, 8}, v, true);
        run("com_readout", {h}, [=] { return nn::com_readout(h); });
        const std::vector<Position> truth{{2.0, 7.5}, {6.0, 1.0}};
        auto p = random_tensor({2, 2, 1, 1}, rng);
        p.value() = {4.1, 3.2, 1.7, 5.3};
        out.push_back({"aed_loss", check({p}, [=] { return nn::aed_loss(p, truth); }, eps)});
        out.push_back({"ased_loss", check({p}, [=] { return nn::ased_loss(p, truth); }, eps)});
        out.push_back({"com+aed", check({h}, [=] { return nn::aed_loss(nn::com_readout(h), truth); }, eps)});
    }
    return out;
}

// Small LocUNet used for the end-to-end check.
inline NetConfig tiny_net(Activation final_activation)
{
    NetConfig c;
    c.grid = 8;
    c.n_bs = 1;
    c.encoder = {{3, 3, false}, {4, 4, true}, {4, 3, true}};
    c.decoder_kernels = {3, 4};
    c.final_kernel_1 = 3;
    c.final_kernel_2 = 3;
    c.final_activation = final_activation;
    return c;
}

// End-to-end gradient through the whole network and the AED loss, over every parameter.
inline double end_to_end(std::uint64_t seed, Activation final_activation, double eps = 1e-5)
{
    const auto cfg = tiny_net(final_activation);
    LocUNet<double> net(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x5eed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> xv(std::size_t(2 * cfg.in_channels() * 8 * 8));
    for (auto &v : xv)
        v = u(rng);
    const auto x = Tensor<double>::from({2, cfg.in_channels(), 8, 8}, xv);
    const std::vector<Position> truth{{1.5, 7.0}, {7.5, 2.0}};
    return check(net.params(), [&] { return nn::aed_loss(net.forward(x, false).estimate, truth); }, eps);
}

} // namespace gradcheck
