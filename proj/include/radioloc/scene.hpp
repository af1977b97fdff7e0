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

// Procedural Manhattan-style city scenes, cars as unknown obstructions, and BS/UE deployments.

#include "radioloc/errors.hpp"
#include "radioloc/grid.hpp"
#include "radioloc/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <vector>

namespace radioloc
{

struct CityScene
{
    GridSpec spec;
    BinaryGrid buildings;
    BinaryGrid cars; // same size as buildings, all zero when no cars were placed
    std::vector<Position> bs;
    std::vector<Position> ue;

    [[nodiscard]] BinaryGrid obstacles(bool with_cars) const
    {
        BinaryGrid out = buildings;
        if (with_cars && !cars.empty())
            for (std::size_t i = 0; i < out.size(); ++i)
                out.at_index(i) = std::uint8_t(out.at_index(i) | cars.at_index(i));
        return out;
    }

    [[nodiscard]] bool is_free(Pixel p) const
    {
        return !buildings[p] && (cars.empty() || !cars[p]);
    }

    [[nodiscard]] int car_pixel_count() const
    {
        return int(std::count(cars.data().begin(), cars.data().end(), std::uint8_t(1)));
    }
};

struct SceneGenConfig
{
    std::uint64_t seed = 1;
    int n_maps = 99;
    GridSpec grid;
    int street_pitch_px = 40; // mean block length
    int street_width_min_px = 5;
    int street_width_max_px = 10;
    double building_fill = 0.3; // target fraction of pixels covered by buildings
    int n_cars = 100;
    double car_width_m = 2.0;
    double car_length_m = 5.0;
    int n_bs_pool = 80;
    int n_ue = 200;
    int n_deployments = 50;
    int bs_per_deployment = 5;
    double min_bs_separation_m = 20.0;

    void validate() const
    {
        grid.validate();
        if (street_width_min_px < 4 || street_width_max_px < street_width_min_px)
            throw ConfigError("SceneGenConfig: streets must be at least 4 px wide");
        if (street_pitch_px < 8)
            throw ConfigError("SceneGenConfig: street pitch too small");
        if (building_fill < 0.0 || building_fill >= 1.0)
            throw ConfigError("SceneGenConfig: building_fill must lie in [0, 1)");
        if (n_maps < 0 || n_cars < 0 || n_bs_pool < 0 || n_ue < 0 || n_deployments < 0)
            throw ConfigError("SceneGenConfig: counts must be non-negative");
        if (bs_per_deployment < 1 || bs_per_deployment > n_bs_pool)
            throw ConfigError("SceneGenConfig: bs_per_deployment must lie in [1, n_bs_pool]");
    }
};

namespace detail
{

struct Interval
{
    int lo; // inclusive
    int hi; // exclusive
};

// Alternating block / street intervals covering [0, size).
inline std::vector<Interval> layout_blocks(int size, const SceneGenConfig &cfg, std::mt19937_64 &rng)
{
    std::uniform_int_distribution<int> street(cfg.street_width_min_px, cfg.street_width_max_px);
    std::uniform_int_distribution<int> block(std::max(4, int(cfg.street_pitch_px * 0.6)),
                                             std::max(5, int(cfg.street_pitch_px * 1.4)));
    std::uniform_int_distribution<int> offset(0, cfg.street_pitch_px);
    std::vector<Interval> blocks;
    int pos = -offset(rng);
    while (pos < size)
    {
        const int len = block(rng);
        const Interval b{std::max(pos, 0), std::min(pos + len, size)};
        if (b.hi - b.lo >= 3)
            blocks.push_back(b);
        pos += len + street(rng);
    }
    return blocks;
}

struct Lot
{
    int r0, r1, c0, c1; // half-open
};

} // namespace detail

// Car-free city for map `index`. `attempt` lets callers regenerate a rejected scene deterministically.
inline CityScene generate_city(const SceneGenConfig &cfg, int index, int attempt = 0)
{
    cfg.validate();
    if (index < 0 || index >= std::max(cfg.n_maps, 1))
        throw std::invalid_argument("generate_city: map index out of range");
    if (cfg.building_fill > 0.7)
        throw ConfigError("generate_city: building_fill leaves less than 30% free space");

    const int n = cfg.grid.size_px;
    CityScene scene;
    scene.spec = cfg.grid;
    scene.buildings = BinaryGrid(n, n, 0);
    scene.cars = BinaryGrid(n, n, 0);
    if (cfg.building_fill <= 0.0)
        return scene;

    auto rng = make_rng({cfg.seed, stream::city, std::uint64_t(index), std::uint64_t(attempt)});
    const auto rows = detail::layout_blocks(n, cfg, rng);
    const auto cols = detail::layout_blocks(n, cfg, rng);

    // Split blocks into 1x1..2x2 lots; lots inside a block touch each other, setbacks only face the street.
    std::vector<detail::Lot> lots;
    std::uniform_int_distribution<int> setback(0, 2);
    std::bernoulli_distribution split(0.5);
    for (const auto &rb : rows)
        for (const auto &cb : cols)
        {
            std::vector<int> rcuts{rb.lo, rb.hi};
            std::vector<int> ccuts{cb.lo, cb.hi};
            if (rb.hi - rb.lo >= 16 && split(rng))
                rcuts.insert(rcuts.begin() + 1, rb.lo + (rb.hi - rb.lo) / 2 + setback(rng) - 1);
            if (cb.hi - cb.lo >= 16 && split(rng))
                ccuts.insert(ccuts.begin() + 1, cb.lo + (cb.hi - cb.lo) / 2 + setback(rng) - 1);
            for (std::size_t i = 0; i + 1 < rcuts.size(); ++i)
                for (std::size_t j = 0; j + 1 < ccuts.size(); ++j)
                {
                    detail::Lot lot{rcuts[i], rcuts[i + 1], ccuts[j], ccuts[j + 1]};
                    if (i == 0 && rb.lo > 0)
                        lot.r0 += setback(rng);
                    if (i + 2 == rcuts.size() && rb.hi < n)
                        lot.r1 -= setback(rng);
                    if (j == 0 && cb.lo > 0)
                        lot.c0 += setback(rng);
                    if (j + 2 == ccuts.size() && cb.hi < n)
                        lot.c1 -= setback(rng);
                    if (lot.r1 - lot.r0 >= 2 && lot.c1 - lot.c0 >= 2)
                        lots.push_back(lot);
                }
        }

    std::shuffle(lots.begin(), lots.end(), rng);
    const auto target = std::size_t(cfg.building_fill * double(n) * double(n));
    std::size_t covered = 0;
    for (const auto &lot : lots)
    {
        if (covered >= target)
            break;
        for (int r = lot.r0; r < lot.r1; ++r)
            for (int c = lot.c0; c < lot.c1; ++c)
                if (!scene.buildings(r, c))
                {
                    scene.buildings(r, c) = 1;
                    ++covered;
                }
    }
    if (covered < target)
        throw ConfigError("generate_city: building_fill unattainable with the street layout");
    return scene;
}

// Chebyshev distance (in pixels) to the nearest building or the map edge.
inline Grid<int> building_distance(const BinaryGrid &buildings)
{
    const int n = buildings.rows();
    Grid<int> d(n, n, std::numeric_limits<int>::max());
    std::queue<Pixel> q;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
        {
            const bool edge = r == 0 || c == 0 || r == n - 1 || c == n - 1;
            if (buildings(r, c))
            {
                d(r, c) = 0;
                q.push({r, c});
            }
            else if (edge)
            {
                d(r, c) = 1;
                q.push({r, c});
            }
        }
    while (!q.empty())
    {
        const Pixel p = q.front();
        q.pop();
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc)
            {
                const int r = p.row + dr, c = p.col + dc;
                if (!d.contains(r, c) || d(r, c) <= d(p.row, p.col) + 1)
                    continue;
                d(r, c) = d(p.row, p.col) + 1;
                q.push({r, c});
            }
    }
    return d;
}

// Place up to n_cars non-overlapping axis-aligned cars on free pixels near curbs or street centerlines.
// Saturates silently when the streets cannot hold more.
inline CityScene place_cars(const CityScene &scene, const SceneGenConfig &cfg, std::uint64_t rng_seed)
{
    const int n = scene.spec.size_px;
    CityScene out = scene;
    out.cars = BinaryGrid(n, n, 0);
    if (cfg.n_cars == 0)
        return out;

    const int width = std::max(1, int(std::lround(cfg.car_width_m / scene.spec.pixel_len_m)));
    const int length = std::max(1, int(std::lround(cfg.car_length_m / scene.spec.pixel_len_m)));
    const auto dist = building_distance(scene.buildings);

    BinaryGrid reserved(n, n, 0);
    for (const auto &p : scene.bs)
        reserved[to_pixel(p, n)] = 1;
    for (const auto &p : scene.ue)
        reserved[to_pixel(p, n)] = 1;

    auto rng = make_rng({cfg.seed, stream::cars, rng_seed});
    std::uniform_int_distribution<int> coord(0, n - 1);
    std::bernoulli_distribution along_x(0.5);

    int placed = 0;
    const long max_tries = long(cfg.n_cars) * 500;
    for (long t = 0; t < max_tries && placed < cfg.n_cars; ++t)
    {
        const int r0 = coord(rng), c0 = coord(rng);
        const bool horiz = along_x(rng);
        const int h = horiz ? width : length;
        const int w = horiz ? length : width;
        if (r0 + h > n || c0 + w > n)
            continue;

        bool ok = true;
        int min_dist = std::numeric_limits<int>::max();
        for (int r = r0; r < r0 + h && ok; ++r)
            for (int c = c0; c < c0 + w && ok; ++c)
            {
                if (scene.buildings(r, c) || out.cars(r, c) || reserved(r, c))
                    ok = false;
                min_dist = std::min(min_dist, dist(r, c));
            }
        if (!ok)
            continue;

        // Curb-side parking, or sitting on the street ridge (centerline) across the car's short axis.
        const int rc = r0 + h / 2, cc = c0 + w / 2;
        bool centerline = false;
        if (horiz)
            centerline = dist(rc, cc) >= (rc > 0 ? dist(rc - 1, cc) : 0) &&
                         dist(rc, cc) >= (rc + 1 < n ? dist(rc + 1, cc) : 0);
        else
            centerline = dist(rc, cc) >= (cc > 0 ? dist(rc, cc - 1) : 0) &&
                         dist(rc, cc) >= (cc + 1 < n ? dist(rc, cc + 1) : 0);
        if (min_dist > 2 && !centerline)
            continue;

        for (int r = r0; r < r0 + h; ++r)
            for (int c = c0; c < c0 + w; ++c)
                out.cars(r, c) = 1;
        ++placed;
    }
    return out;
}

struct Deployment
{
    std::vector<int> bs_ids; // indices into the BS pool, ascending
};

struct DeploymentPlan
{
    std::vector<Position> bs_pool;
    std::vector<Position> ue;
    std::vector<Deployment> deployments;
};

// BS pool in the central 150x150 box, UEs in the central 164x164 box, both on free pixels.
// Each deployment picks bs_per_deployment pool entries pairwise >= min_bs_separation_m apart.
inline DeploymentPlan sample_deployments(const CityScene &scene, const SceneGenConfig &cfg, std::uint64_t rng_seed)
{
    cfg.validate();
    const int n = scene.spec.size_px;
    auto rng = make_rng({cfg.seed, stream::deploy, rng_seed});

    auto free_in = [&](Box box) {
        std::vector<Pixel> out;
        for (int r = box.lo; r <= box.hi; ++r)
            for (int c = box.lo; c <= box.hi; ++c)
                if (scene.is_free({r, c}))
                    out.push_back({r, c});
        return out;
    };

    DeploymentPlan plan;
    auto bs_cand = free_in(bs_box(n));
    if (int(bs_cand.size()) < cfg.n_bs_pool)
        throw ConfigError("sample_deployments: not enough free pixels for the BS pool");
    std::shuffle(bs_cand.begin(), bs_cand.end(), rng);
    BinaryGrid taken(n, n, 0);
    for (int i = 0; i < cfg.n_bs_pool; ++i)
    {
        plan.bs_pool.push_back(bs_cand[i].center());
        taken[bs_cand[i]] = 1;
    }

    auto ue_cand = free_in(ue_box(n));
    std::erase_if(ue_cand, [&](Pixel p) { return taken[p] != 0; });
    if (int(ue_cand.size()) < cfg.n_ue)
        throw ConfigError("sample_deployments: not enough free pixels for the UEs");
    std::shuffle(ue_cand.begin(), ue_cand.end(), rng);
    for (int i = 0; i < cfg.n_ue; ++i)
        plan.ue.push_back(ue_cand[i].center());

    const double min_sep_px = cfg.min_bs_separation_m / scene.spec.pixel_len_m;
    std::vector<int> ids(cfg.n_bs_pool);
    std::iota(ids.begin(), ids.end(), 0);
    for (int d = 0; d < cfg.n_deployments; ++d)
    {
        bool found = false;
        for (int attempt = 0; attempt < 1000 && !found; ++attempt)
        {
            // partial Fisher-Yates: draw without replacement
            for (int k = 0; k < cfg.bs_per_deployment; ++k)
            {
                std::uniform_int_distribution<int> pick(k, cfg.n_bs_pool - 1);
                std::swap(ids[k], ids[pick(rng)]);
            }
            std::vector<int> subset(ids.begin(), ids.begin() + cfg.bs_per_deployment);
            found = true;
            for (std::size_t a = 0; a < subset.size() && found; ++a)
                for (std::size_t b = a + 1; b < subset.size() && found; ++b)
                    if (distance_px(plan.bs_pool[subset[a]], plan.bs_pool[subset[b]]) < min_sep_px)
                        found = false;
            if (found)
            {
                std::sort(subset.begin(), subset.end());
                plan.deployments.push_back({std::move(subset)});
            }
        }
        if (!found)
            throw ConfigError("sample_deployments: cannot find a BS subset with the required separation");
    }
    return plan;
}

// One fully generated map: the city (buildings + cars) with its deployment plan attached.
struct GeneratedMap
{
    int map_id = 0;
    int attempt = 0;
    CityScene scene; // cars included; scene.bs / scene.ue hold the pool and the UEs
    std::vector<Deployment> deployments;
};

// generate_city -> place_cars -> sample_deployments with deterministic regeneration (at most 1000 attempts).
inline GeneratedMap generate_map(const SceneGenConfig &cfg, int index)
{
    cfg.validate();
    if (cfg.building_fill > 0.7)
        throw ConfigError("generate_map: building_fill leaves less than 30% free space");
    for (int attempt = 0; attempt < 1000; ++attempt)
    {
        try
        {
            auto city = generate_city(cfg, index, attempt);
            const auto key = (std::uint64_t(index) << 20) | std::uint64_t(attempt);
            auto scene = place_cars(city, cfg, key);
            auto plan = sample_deployments(scene, cfg, key);
            scene.bs = std::move(plan.bs_pool);
            scene.ue = std::move(plan.ue);
            return {index, attempt, std::move(scene), std::move(plan.deployments)};
        }
        catch (const ConfigError &)
        {
        }
    }
    throw ConfigError("generate_map: no feasible scene after 1000 attempts");
}

struct MapSplit
{
    std::vector<int> train, val, test;
};

// Map-level split in the 69/15/15 proportion; val and test get at least one map when n >= 3.
inline MapSplit split_maps(int n_maps, std::uint64_t seed)
{
    std::vector<int> ids(std::max(n_maps, 0));
    std::iota(ids.begin(), ids.end(), 0);
    auto rng = make_rng({seed, stream::split});
    std::shuffle(ids.begin(), ids.end(), rng);
    int n_val = int(std::lround(n_maps * 15.0 / 99.0));
    int n_test = int(std::lround(n_maps * 15.0 / 99.0));
    if (n_maps >= 3)
    {
        n_val = std::max(n_val, 1);
        n_test = std::max(n_test, 1);
    }
    const int n_train = n_maps - n_val - n_test;
    MapSplit s;
    s.train.assign(ids.begin(), ids.begin() + n_train);
    s.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    s.test.assign(ids.begin() + n_train + n_val, ids.end());
    for (auto *v : {&s.train, &s.val, &s.test})
        std::sort(v->begin(), v->end());
    return s;
}

} // namespace radioloc
