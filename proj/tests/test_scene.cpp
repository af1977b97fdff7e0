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

#include "radioloc/scene.hpp"

#include <catch_amalgamated.hpp>

#include <set>

using namespace radioloc;

namespace
{

double free_fraction(const CityScene &s)
{
    std::size_t free = 0;
    for (std::size_t i = 0; i < s.buildings.size(); ++i)
        free += s.buildings.at_index(i) == 0;
    return double(free) / double(s.buildings.size());
}

} // namespace

TEST_CASE("empty fill gives an empty city", "[scene]")
{
    SceneGenConfig cfg;
    cfg.building_fill = 0.0;
    const auto s = generate_city(cfg, 0);
    CHECK(free_fraction(s) == 1.0);
}

TEST_CASE("city generation is deterministic", "[scene]")
{
    const SceneGenConfig cfg;
    CHECK(generate_city(cfg, 0).buildings == generate_city(cfg, 0).buildings);
    CHECK_FALSE(generate_city(cfg, 0).buildings == generate_city(cfg, 1).buildings);
}

TEST_CASE("free fraction of default cities", "[scene]")
{
    const SceneGenConfig cfg;
    for (int i = 0; i < 5; ++i)
    {
        const double f = free_fraction(generate_city(cfg, i));
        CHECK(f >= 0.3);
        CHECK(f <= 0.9);
    }
}

TEST_CASE("streets are at least 4 px wide", "[scene]")
{
    const SceneGenConfig cfg;
    const auto s = generate_city(cfg, 2);
    const int n = s.spec.size_px;
    // any free run between two building pixels along a full row or column that is a street
    // corridor has width >= 4: check that every row fully free appears in bands of >= 4
    int run = 0;
    for (int r = 0; r < n; ++r)
    {
        bool row_free = true;
        for (int c = 0; c < n && row_free; ++c)
            row_free = s.buildings(r, c) == 0;
        if (row_free)
            ++run;
        else
        {
            if (run > 0 && r - run > 0)
                CHECK(run >= 4);
            run = 0;
        }
    }
}

TEST_CASE("cars are disjoint and deterministic", "[scene]")
{
    const SceneGenConfig cfg;
    const auto city = generate_city(cfg, 0);
    const auto a = place_cars(city, cfg, 11);
    const auto b = place_cars(city, cfg, 11);
    CHECK(a.cars == b.cars);
    CHECK(a.car_pixel_count() > 0);
    CHECK(a.car_pixel_count() <= cfg.n_cars * 10);
    for (std::size_t i = 0; i < a.cars.size(); ++i)
        if (a.cars.at_index(i))
            CHECK(a.buildings.at_index(i) == 0);
}

TEST_CASE("no room for cars gives zero cars", "[scene]")
{
    SceneGenConfig cfg;
    cfg.grid.size_px = 16;
    cfg.car_length_m = 40.0;
    cfg.building_fill = 0.0;
    const auto city = generate_city(cfg, 0);
    const auto s = place_cars(city, cfg, 1);
    CHECK(s.car_pixel_count() == 0);
}

TEST_CASE("deployment constraints", "[scene]")
{
    SceneGenConfig cfg;
    cfg.bs_per_deployment = 3;
    const auto m = generate_map(cfg, 0);
    const auto &s = m.scene;
    REQUIRE(int(s.bs.size()) == cfg.n_bs_pool);
    REQUIRE(int(s.ue.size()) == cfg.n_ue);
    REQUIRE(int(m.deployments.size()) == cfg.n_deployments);

    for (const auto &u : s.ue)
    {
        CHECK(u.x >= 47.0);
        CHECK(u.x <= 210.0);
        CHECK(u.y >= 47.0);
        CHECK(u.y <= 210.0);
        CHECK(s.is_free(to_pixel(u, 256)));
    }
    const Box bb = bs_box(256);
    for (const auto &b : s.bs)
    {
        CHECK(bb.contains(b));
        CHECK(s.is_free(to_pixel(b, 256)));
    }
    for (const auto &d : m.deployments)
    {
        REQUIRE(d.bs_ids.size() == 3);
        CHECK(std::set<int>(d.bs_ids.begin(), d.bs_ids.end()).size() == 3);
        for (std::size_t i = 0; i < d.bs_ids.size(); ++i)
            for (std::size_t j = i + 1; j < d.bs_ids.size(); ++j)
                CHECK(distance_m(s.bs[d.bs_ids[i]], s.bs[d.bs_ids[j]], s.spec) >= 20.0);
    }

    const auto again = generate_map(cfg, 0);
    CHECK(again.scene.bs == s.bs);
    CHECK(again.scene.ue == s.ue);
    CHECK(again.scene.cars == s.cars);
}

TEST_CASE("infeasible fill is a config error", "[scene]")
{
    SceneGenConfig cfg;
    cfg.building_fill = 0.95;
    CHECK_THROWS_AS(generate_map(cfg, 0), ConfigError);
    cfg.building_fill = 0.3;
    cfg.street_width_min_px = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("map split is at map level", "[scene]")
{
    const auto s = split_maps(99, 1);
    CHECK(s.train.size() == 69);
    CHECK(s.val.size() == 15);
    CHECK(s.test.size() == 15);
    std::set<int> all;
    for (const auto *v : {&s.train, &s.val, &s.test})
        all.insert(v->begin(), v->end());
    CHECK(all.size() == 99);
}
