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

#include "radioloc/grid.hpp"

#include <catch_amalgamated.hpp>

#include <random>
#include <vector>

using namespace radioloc;
using Catch::Approx;

TEST_CASE("pathloss and rss conversions", "[grid]")
{
    const LinkBudget b;
    CHECK(pathloss_to_rss(-100.0, b) == -77.0);
    CHECK(pathloss_to_rss(0.0, b) == 23.0);
    CHECK(pathloss_to_rss(-134.0, b) == -111.0);
    CHECK(rss_to_pathloss(-77.0, b) == -100.0);
    CHECK(rss_to_pathloss(23.0, b) == 0.0);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-200.0, 0.0);
    for (int i = 0; i < 100; ++i)
    {
        const double pl = u(rng);
        CHECK(rss_to_pathloss(pathloss_to_rss(pl, b), b) == Approx(pl).margin(1e-12));
    }
}

TEST_CASE("gray level endpoints and monotonicity", "[grid]")
{
    const LinkBudget b;
    CHECK(to_gray(b.noise_floor_db, b) == 0.0);
    CHECK(to_gray(0.0, b) == 1.0);
    CHECK(to_gray(b.noise_floor_db / 2.0, b) == Approx(0.5).margin(1e-15));

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(b.noise_floor_db, 0.0);
    for (int i = 0; i < 200; ++i)
    {
        const double a = u(rng), c = u(rng);
        if (a < c)
            CHECK(to_gray(a, b) <= to_gray(c, b));
        CHECK(from_gray(to_gray(a, b), b) == Approx(a).margin(1e-12));
    }
}

TEST_CASE("count_detectable", "[grid]")
{
    const LinkBudget b;
    const std::vector<double> pl{-100, -140, -130, -120, -133};
    CHECK(count_detectable(pl, b, 0.0) == 4);
    CHECK(count_detectable(pl, b, 10.0) == 2); // -100 and -120 exceed -124
    CHECK(count_detectable(std::vector<double>{}, b, 0.0) == 0);
    int prev = 1 << 30;
    for (double m = 0.0; m <= 40.0; m += 1.0)
    {
        const int n = count_detectable(pl, b, m);
        CHECK(n <= prev);
        prev = n;
    }
}

TEST_CASE("central boxes at the default size", "[grid]")
{
    const Box ue = ue_box(256);
    CHECK(ue.lo == 46);
    CHECK(ue.hi == 209);
    const Box bs = bs_box(256);
    CHECK(bs.hi - bs.lo + 1 == 150);
}

TEST_CASE("downsampling and coarse coordinates", "[grid]")
{
    RealGrid g(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            g(r, c) = r * 4 + c;
    const auto d = downsample_mean(g, 2);
    CHECK(d(0, 0) == Approx(2.5));
    CHECK(d(1, 1) == Approx(12.5));
    CHECK_THROWS_AS(downsample_mean(g, 3), std::invalid_argument);

    // fine pixels 1 and 2 average to coarse pixel 1
    CHECK(fine_to_coarse({1.5, 2.5}, 2).x == Approx(1.0));
    CHECK(fine_to_coarse({1.5, 2.5}, 2).y == Approx(1.5));
    const Position p{17.25, 3.0};
    const auto back = coarse_to_fine(fine_to_coarse(p, 4), 4);
    CHECK(back.x == Approx(p.x));
    CHECK(back.y == Approx(p.y));
}

TEST_CASE("pixel and position conventions", "[grid]")
{
    const Pixel p{4, 9};
    CHECK(p.center().x == 10.0);
    CHECK(p.center().y == 5.0);
    const Pixel q = to_pixel({10.4, 4.6}, 64);
    CHECK(q.row == 4);
    CHECK(q.col == 9);
    GridSpec s;
    s.size_px = 8;
    CHECK_THROWS(s.validate());
}
