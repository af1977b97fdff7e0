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

#include "radioloc/fingerprint.hpp"

#include <catch_amalgamated.hpp>

#include <functional>

using namespace radioloc;
using Catch::Approx;

namespace
{

RadioMapPtr make_map(int n, const std::function<double(int, int)> &f)
{
    auto m = std::make_shared<RadioMap>();
    m->spec.size_px = n;
    m->pathloss_db = RealGrid(n, n, 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            m->pathloss_db(r, c) = f(r, c);
    return m;
}

// Two smooth, jointly injective maps on an n x n grid.
LocalizationInstance synthetic(int n, Position truth, int shift = 0)
{
    LocalizationInstance li;
    li.est_maps.push_back(make_map(n, [&](int r, int c) { return -40.0 - 0.5 * (c - shift) - 0.01 * (r - shift); }));
    li.est_maps.push_back(make_map(n, [&](int r, int c) { return -40.0 - 0.5 * (r - shift) - 0.013 * (c - shift); }));
    li.city = std::make_shared<BinaryGrid>(n, n, 0);
    li.truth = truth;
    for (const auto &m : li.est_maps)
        li.measured_pl.push_back(m->at(truth));
    return li;
}

} // namespace

TEST_CASE("signal distance", "[fingerprint]")
{
    const std::vector<double> a{-90, -110}, b{-93, -106};
    CHECK(signal_distance(a, a) == 0.0);
    CHECK(signal_distance(a, b) == Approx(5.0));
    const std::vector<double> ap{-110, -90}, bp{-106, -93};
    CHECK(signal_distance(ap, bp) == signal_distance(a, b));
    CHECK_THROWS_AS(signal_distance(a, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("k=1 returns the unique zero-distance pixel", "[fingerprint]")
{
    const auto li = synthetic(64, {30, 40});
    const auto est = knn_localize(li, {1, CandidateMask::FreePixels});
    CHECK(est == li.truth);
}

TEST_CASE("k=2 with two exact matches returns the midpoint", "[fingerprint]")
{
    LocalizationInstance li;
    const int n = 64;
    li.est_maps.push_back(make_map(n, [](int r, int c) { return (r == 30 && (c == 24 || c == 34)) ? -50.0 : -100.0 - c * 0.1; }));
    li.measured_pl = {-50.0};
    li.truth = {25, 31};
    const auto est = knn_localize(li, {2, CandidateMask::FreePixels});
    CHECK(est.x == Approx(30.0));
    CHECK(est.y == Approx(31.0));
}

TEST_CASE("k covering every candidate gives the mask centroid", "[fingerprint]")
{
    const auto li = synthetic(64, {30, 40});
    const auto cand = candidate_pixels(li, CandidateMask::FreePixels);
    const auto est = knn_localize(li, {int(cand.size()), CandidateMask::FreePixels});
    const Box b = ue_box(64);
    CHECK(est.x == Approx((b.lo + b.hi) / 2.0 + 1.0));
    CHECK(est.y == Approx((b.lo + b.hi) / 2.0 + 1.0));
    CHECK_THROWS_AS(knn_localize(li, {int(cand.size()) + 1, CandidateMask::FreePixels}), std::invalid_argument);
    for (int k : {16, 40, 300, 1500})
        CHECK_NOTHROW(knn_localize(synthetic(256, {100, 120}), {k, CandidateMask::FreePixels}));
}

TEST_CASE("translation equivariance", "[fingerprint]")
{
    for (int shift : {1, 3, 5})
    {
        const auto a = synthetic(64, {30, 33});
        const auto b = synthetic(64, {30.0 + shift, 33.0 + shift}, shift);
        for (int k : {1, 4, 9})
        {
            const auto ea = knn_localize(a, {k, CandidateMask::FreePixels});
            const auto eb = knn_localize(b, {k, CandidateMask::FreePixels});
            CHECK(eb.x - ea.x == Approx(shift));
            CHECK(eb.y - ea.y == Approx(shift));
        }
    }
}

TEST_CASE("adaptive kNN", "[fingerprint]")
{
    const auto li = synthetic(64, {30, 40});
    const auto r = adaptive_knn_localize(li, {0.0, 40, CandidateMask::FreePixels});
    CHECK(r.k_used == 1);
    CHECK(r.estimate == li.truth);

    LocalizationInstance flat;
    flat.est_maps.push_back(make_map(64, [](int, int) { return -80.0; }));
    flat.measured_pl = {-70.0};
    const auto f = adaptive_knn_localize(flat, {0.1, 5, CandidateMask::FreePixels});
    CHECK(f.k_used == 5);

    const auto noisy = [&] {
        auto x = li;
        x.measured_pl[0] += 0.3;
        return x;
    }();
    for (double alpha : {0.0, 0.1, 1.0, 10.0})
    {
        const auto g = adaptive_knn_localize(noisy, {alpha, 40, CandidateMask::FreePixels});
        CHECK(g.k_used >= 1);
        CHECK(g.k_used <= 40);
    }
}

TEST_CASE("noiseless maps beat mismatched maps on average", "[fingerprint]")
{
    const auto products = simulate_maps(fixture::tiny(4));
    const auto nom = build_rss_dataset(products, Scenario::Nominal, LinkBudget{}, 1);
    const auto rob = build_rss_dataset(products, Scenario::Robustness, LinkBudget{}, 1);
    double en = 0.0, er = 0.0;
    for (std::size_t i = 0; i < nom.instances.size(); ++i)
    {
        en += distance_px(knn_localize(nom.instances[i], {1, CandidateMask::FreePixels}), nom.instances[i].truth);
        er += distance_px(knn_localize(rob.instances[i], {1, CandidateMask::FreePixels}), rob.instances[i].truth);
    }
    CHECK(en <= er);
}
