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

#include "fixtures.hpp"
#include "gradcheck.hpp"

#include "radioloc/nn/ops.hpp"
#include "radioloc/nn/optim.hpp"

#include <catch_amalgamated.hpp>

using namespace radioloc;
using nn::Tensor;
using Catch::Approx;

namespace
{

Tensor<double> heatmap(int h, int w, std::vector<double> v) { return Tensor<double>::from({1, 1, h, w}, std::move(v)); }

Position com(const Tensor<double> &h)
{
    const auto o = nn::com_readout(h);
    return {o.value()[0], o.value()[1]};
}

} // namespace

TEST_CASE("conv2d fixed cases", "[autodiff]")
{
    std::mt19937_64 rng(1);
    auto x = gradcheck::random_tensor({1, 2, 5, 5}, rng);
    // 1x1 kernel: per-pixel linear map
    auto w = Tensor<double>::from({1, 2, 1, 1}, {0.5, -2.0});
    auto b = Tensor<double>::from({1, 1, 1, 1}, {0.25});
    const auto y = nn::conv2d(x, w, b);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            CHECK(y.value()[r * 5 + c] == Approx(0.5 * x.value()[r * 5 + c] - 2.0 * x.value()[25 + r * 5 + c] + 0.25));
    // centered identity kernel
    std::vector<double> id(9, 0.0);
    id[4] = 1.0;
    auto x1 = gradcheck::random_tensor({1, 1, 6, 6}, rng);
    const auto z = nn::conv2d(x1, Tensor<double>::from({1, 1, 3, 3}, id), Tensor<double>::from({1, 1, 1, 1}, {1.0}));
    for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(z.value()[i] == Approx(x1.value()[i] + 1.0));
    CHECK_THROWS_AS(nn::conv2d(x1, Tensor<double>::from({1, 2, 3, 3}, std::vector<double>(18, 0.0)),
                               Tensor<double>::from({1, 1, 1, 1}, {0.0})),
                    std::invalid_argument);
}

TEST_CASE("conv2d gradient at eps 1e-3", "[autodiff]")
{
    std::mt19937_64 rng(4);
    auto x = gradcheck::random_tensor({1, 3, 8, 8}, rng);
    auto w = gradcheck::random_tensor({2, 3, 3, 3}, rng);
    auto b = gradcheck::random_tensor({1, 2, 1, 1}, rng);
    const double e = gradcheck::check({x, w, b}, gradcheck::through_mse([=] { return nn::conv2d(x, w, b); }, rng), 1e-3);
    CHECK(e < 1e-4);
}

TEST_CASE("every layer passes finite differences", "[autodiff]")
{
    for (std::uint64_t seed : {1, 2, 3})
        for (const auto &c : gradcheck::all_layers(seed))
        {
            INFO(c.name << " seed " << seed);
            CHECK(c.worst < c.tolerance);
        }
}

TEST_CASE("end-to-end gradient through the network", "[autodiff]")
{
    for (auto a : {Activation::LeakyRelu, Activation::Relu, Activation::Softmax, Activation::Sigmoid})
    {
        INFO(to_string(a));
        CHECK(gradcheck::end_to_end(7, a) < 1e-3);
    }
}

TEST_CASE("pooling, upsampling and softmax", "[autodiff]")
{
    const auto c = Tensor<double>::from({1, 1, 4, 6}, std::vector<double>(24, 2.5));
    const auto pooled = nn::avgpool2(c);
    for (double v : pooled.value())
        CHECK(v == 2.5);
    const auto round_trip = nn::upsample2(pooled);
    for (double v : round_trip.value())
        CHECK(v == 2.5);
    CHECK_THROWS_AS(nn::avgpool2(Tensor<double>::from({1, 1, 3, 4}, std::vector<double>(12, 0.0))),
                    std::invalid_argument);

    // interpolation weights: 0.75 on the nearer source sample, 0.25 on the other, edges clamped
    const auto u = nn::upsample2(Tensor<double>::from({1, 1, 1, 2}, {1.0, 2.0}));
    REQUIRE(u.dim(3) == 4);
    const std::vector<double> row{1.0, 1.25, 1.75, 2.0};
    for (int r = 0; r < 2; ++r)
        for (int col = 0; col < 4; ++col)
            CHECK(u.value()[r * 4 + col] == Approx(row[col]));

    std::mt19937_64 rng(2);
    const auto s = nn::softmax2d(gradcheck::random_tensor({2, 3, 5, 7}, rng));
    for (int p = 0; p < 6; ++p)
    {
        double sum = 0.0;
        for (int i = 0; i < 35; ++i)
            sum += s.value()[p * 35 + i];
        CHECK(sum == Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("center of mass contract", "[autodiff]")
{
    std::vector<double> v(32 * 32, 0.0);
    v[19 * 32 + 9] = 4.0;
    const auto p = com(heatmap(32, 32, v));
    CHECK(p.x == 10.0);
    CHECK(p.y == 20.0);

    const auto uni = com(heatmap(256, 256, std::vector<double>(256 * 256, 1.0)));
    CHECK(uni.x == Approx(128.5).margin(1e-9));
    CHECK(uni.y == Approx(128.5).margin(1e-9));

    std::vector<double> two(4 * 4, 0.0);
    two[0] = 1.0;
    two[2] = 3.0;
    const auto t = com(heatmap(4, 4, two));
    CHECK(t.x == Approx(2.5).margin(1e-9));
    CHECK(t.y == Approx(1.0).margin(1e-9));

    std::mt19937_64 rng(6);
    auto h = gradcheck::random_tensor({1, 1, 16, 16}, rng);
    for (auto &e : h.value())
        e += 0.3; // keep the mass away from zero
    const auto base = com(h);
    for (double c : {-1.0, 0.5, 3.0})
    {
        auto scaled = h.detach();
        for (auto &e : scaled.value())
            e *= c;
        const auto q = com(scaled);
        CHECK(q.x == Approx(base.x).margin(1e-9));
        CHECK(q.y == Approx(base.y).margin(1e-9));
    }

    CHECK_THROWS_AS(com(heatmap(4, 4, std::vector<double>(16, 0.0))), DegenerateHeatmapError);
    std::vector<std::uint8_t> valid;
    nn::com_readout(Tensor<double>::from({2, 1, 2, 2}, {0, 0, 0, 0, 1, 0, 0, 0}), &valid);
    CHECK(valid == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("distance losses", "[autodiff]")
{
    auto pred = [](std::vector<double> v) { return Tensor<double>::from({int(v.size() / 2), 2, 1, 1}, v, true); };
    CHECK(nn::aed_loss(pred({3, 4}), {{3, 4}}).value()[0] == 0.0);
    CHECK(nn::aed_loss(pred({0, 0}), {{3, 4}}).value()[0] == Approx(5.0));
    CHECK(nn::aed_loss(pred({0, 0, 1, 1}), {{3, 4}, {1, 1}}).value()[0] == Approx(2.5));
    CHECK(nn::ased_loss(pred({0, 0}), {{3, 4}}).value()[0] == Approx(25.0));

    auto same = pred({1, 2});
    same.zero_grad();
    nn::backward(nn::ased_loss(same, {{1, 2}}));
    CHECK(same.grad() == std::vector<double>{0.0, 0.0});
    auto at = pred({1, 2});
    at.zero_grad();
    nn::backward(nn::aed_loss(at, {{1, 2}}));
    CHECK(at.grad() == std::vector<double>{0.0, 0.0});

    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int t = 0; t < 50; ++t)
    {
        std::vector<double> v(8);
        std::vector<Position> truth(4);
        for (auto &e : v)
            e = u(rng);
        for (auto &q : truth)
            q = {u(rng), u(rng)};
        const double aed = nn::aed_loss(pred(v), truth).value()[0];
        CHECK(nn::ased_loss(pred(v), truth).value()[0] >= aed * aed - 1e-12);
    }
    CHECK_THROWS_AS(nn::aed_loss(Tensor<double>::zeros({0, 2, 1, 1}), {}), std::invalid_argument);
}

TEST_CASE("translation equivariance of the conv stack", "[autodiff]")
{
    std::mt19937_64 rng(3);
    auto w = gradcheck::random_tensor({2, 1, 3, 3}, rng);
    auto b = Tensor<double>::from({1, 2, 1, 1}, {0.0, 0.0});
    auto stack = [&](const Tensor<double> &x) { return nn::upsample2(nn::avgpool2(nn::conv2d(x, w, b))); };
    std::vector<double> img(32 * 32, 0.0), shifted(32 * 32, 0.0);
    for (int r = 12; r < 18; ++r)
        for (int c = 10; c < 16; ++c)
        {
            img[r * 32 + c] = std::sin(r * 0.7 + c * 1.3);
            shifted[(r + 2) * 32 + c + 2] = img[r * 32 + c];
        }
    const auto a = stack(Tensor<double>::from({1, 1, 32, 32}, img));
    const auto s = stack(Tensor<double>::from({1, 1, 32, 32}, shifted));
    for (int ch = 0; ch < 2; ++ch)
        for (int r = 4; r < 26; ++r)
            for (int c = 4; c < 26; ++c)
                CHECK(s.value()[ch * 1024 + (r + 2) * 32 + c + 2] == Approx(a.value()[ch * 1024 + r * 32 + c]).margin(1e-12));
}

TEST_CASE("adam", "[autodiff]")
{
    auto p = Tensor<double>::from({1, 1, 1, 2}, {1.0, -2.0}, true);
    std::vector<Tensor<double>> ps{p};
    nn::Adam<double> opt(0.1);
    p.zero_grad();
    opt.step(ps);
    CHECK(p.value() == std::vector<double>{1.0, -2.0});

    // hand-computed first step with gradient g: m = 0.1 g, v = 0.001 g^2, bias-corrected to g and g^2
    auto q = Tensor<double>::from({1, 1, 1, 2}, {1.0, -2.0}, true);
    std::vector<Tensor<double>> qs{q};
    nn::Adam<double> opt2(0.01);
    q.grad() = {0.5, -3.0};
    opt2.step(qs);
    CHECK(q.value()[0] == Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(q.value()[1] == Approx(-2.0 + 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
    // second step with the same gradient: m_hat = g, v_hat = g^2 again
    opt2.step(qs);
    CHECK(q.value()[0] == Approx(1.0 - 2 * 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));

    auto trajectory = [] {
        std::mt19937_64 rng(5);
        auto x = gradcheck::random_tensor({1, 1, 4, 4}, rng);
        std::vector<Tensor<double>> xs{x};
        nn::Adam<double> o(0.05);
        const std::vector<double> target(16, 0.3);
        for (int i = 0; i < 20; ++i)
        {
            x.zero_grad();
            nn::backward(nn::mse_loss(x, target));
            o.step(xs);
        }
        return x.value();
    };
    CHECK(trajectory() == trajectory());
}

TEST_CASE("checkpoint format", "[autodiff]")
{
    LocUNet<double> a(gradcheck::tiny_net(Activation::LeakyRelu), 1), b(gradcheck::tiny_net(Activation::LeakyRelu), 2);
    const auto bytes = nn::encode_checkpoint(a.named_params());
    nn::decode_checkpoint(bytes, b.named_params());
    CHECK(a.snapshot() == b.snapshot());

    fixture::TempDir dir("ckpt");
    nn::save_checkpoint(dir.path / "w.ckpt", a.named_params());
    LocUNet<double> c(gradcheck::tiny_net(Activation::LeakyRelu), 3);
    nn::load_checkpoint(dir.path / "w.ckpt", c.named_params());
    CHECK(a.snapshot() == c.snapshot());

    LocUNet<double> d(gradcheck::tiny_net(Activation::LeakyRelu), 4);
    const auto before = d.snapshot();
    CHECK_THROWS_AS(nn::decode_checkpoint(bytes.substr(0, bytes.size() - 9), d.named_params()), MalformedFileError);
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(nn::decode_checkpoint(flipped, d.named_params()), ChecksumError);
    auto versioned = bytes;
    versioned[8] = 2;
    CHECK_THROWS_AS(nn::decode_checkpoint(versioned, d.named_params()), VersionMismatchError);
    CHECK(d.snapshot() == before);

    auto other_cfg = gradcheck::tiny_net(Activation::LeakyRelu);
    other_cfg.encoder[0].width = 5;
    LocUNet<double> e(other_cfg, 1);
    CHECK_THROWS_AS(nn::decode_checkpoint(bytes, e.named_params()), MalformedFileError);
}
