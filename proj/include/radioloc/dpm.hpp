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

// Dominant path model on a 2D occupancy grid.
//
// The dominant path to every receiver pixel is traced with a label-setting Dijkstra over the
// free-pixel graph. Each label keeps an anchor: the BS or the last diffraction corner on the path.
// Relaxing u -> v first tries to reach v in a straight line from u's anchor; when that line is
// blocked, u itself becomes a new corner. Line-of-sight pixels therefore get their exact Euclidean
// distance and zero diffractions, and every diffraction sits on a corner with a well-defined turn angle.

#include "radioloc/errors.hpp"
#include "radioloc/grid.hpp"
#include "radioloc/parallel.hpp"
#include "radioloc/scene.hpp"

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <queue>
#include <tuple>
#include <vector>

namespace radioloc
{

// Free-space loss at 1 m (dB) for a carrier in GHz: 32.44 + 20 log10(f_MHz) + 20 log10(d_km).
inline double free_space_ref_loss_db(double carrier_ghz)
{
    return 32.44 + 20.0 * std::log10(carrier_ghz * 1000.0) - 60.0;
}

struct DpmConfig
{
    double fs_ref_loss_db = free_space_ref_loss_db(5.9);
    double fs_exponent = 2.0;
    double diff_loss_base_db = 30.0; // loss of the first diffraction at the reference angle
    double diff_loss_growth = 1.5;   // multiplier per additional diffraction
    double diff_angle_ref_deg = 90.0;
    double diff_loss_cap_db = 70.0;
    int max_diff_count = 8; // pixels needing more diffractions are set to the floor
    int neighborhood = 8;   // 8 or 16
    double min_distance_m = 1.0;

    void validate() const
    {
        if (fs_ref_loss_db < 0 || diff_loss_base_db < 0 || diff_loss_cap_db < 0)
            throw std::invalid_argument("DpmConfig: losses must be non-negative");
        if (!(fs_exponent > 0))
            throw std::invalid_argument("DpmConfig: fs_exponent must be positive");
        if (!(diff_loss_growth >= 1.0))
            throw std::invalid_argument("DpmConfig: diff_loss_growth must be >= 1");
        if (!(diff_angle_ref_deg > 0))
            throw std::invalid_argument("DpmConfig: reference angle must be positive");
        if (neighborhood != 8 && neighborhood != 16)
            throw std::invalid_argument("DpmConfig: neighborhood must be 8 or 16");
        if (!(min_distance_m > 0))
            throw std::invalid_argument("DpmConfig: min_distance_m must be positive");
    }

    // Loss of the k-th diffraction (k >= 1) turning by angle_deg.
    [[nodiscard]] double diffraction_term(int k, double angle_deg) const
    {
        return diff_loss_base_db * std::pow(diff_loss_growth, k - 1) * (angle_deg / diff_angle_ref_deg);
    }
};

struct DominantPathField
{
    GridSpec spec;
    Pixel bs;
    RealGrid dist_m;             // +inf where unreachable
    Grid<int> diff_count;        // -1 where unreachable
    RealGrid diff_angle_sum_deg; // accumulated turn angle
    RealGrid diff_loss_db;       // accumulated diffraction loss before capping
    Grid<int> anchor;            // flat index of the last corner (or the BS); -1 where unreachable
    BinaryGrid reachable;
    BinaryGrid los; // straight segment to the BS is obstacle-free
};

// Supercover line test between pixel centers: every cell the segment touches must be free.
// When the segment passes exactly through a cell corner both side cells are tested.
inline bool line_of_sight(const BinaryGrid &obstacles, Pixel a, Pixel b)
{
    int x = a.col, y = a.row;
    int dx = b.col - a.col, dy = b.row - a.row;
    const int xstep = dx < 0 ? -1 : 1, ystep = dy < 0 ? -1 : 1;
    dx = std::abs(dx);
    dy = std::abs(dy);
    if (obstacles(y, x))
        return false;
    const int ddx = 2 * dx, ddy = 2 * dy;
    if (ddx >= ddy)
    {
        int errorprev = dx, error = dx;
        for (int i = 0; i < dx; ++i)
        {
            x += xstep;
            error += ddy;
            if (error > ddx)
            {
                y += ystep;
                error -= ddx;
                if (error + errorprev < ddx)
                {
                    if (obstacles(y - ystep, x))
                        return false;
                }
                else if (error + errorprev > ddx)
                {
                    if (obstacles(y, x - xstep))
                        return false;
                }
                else if (obstacles(y - ystep, x) || obstacles(y, x - xstep))
                    return false;
            }
            if (obstacles(y, x))
                return false;
            errorprev = error;
        }
    }
    else
    {
        int errorprev = dy, error = dy;
        for (int i = 0; i < dy; ++i)
        {
            y += ystep;
            error += ddx;
            if (error > ddy)
            {
                x += xstep;
                error -= ddy;
                if (error + errorprev < ddy)
                {
                    if (obstacles(y, x - xstep))
                        return false;
                }
                else if (error + errorprev > ddy)
                {
                    if (obstacles(y - ystep, x))
                        return false;
                }
                else if (obstacles(y, x - xstep) || obstacles(y - ystep, x))
                    return false;
            }
            if (obstacles(y, x))
                return false;
            errorprev = error;
        }
    }
    return true;
}

// Absolute heading change (degrees, in [0, 180]) from direction (ax, ay) to (bx, by).
inline double turn_angle_deg(double ax, double ay, double bx, double by)
{
    const double cross = ax * by - ay * bx;
    const double dot = ax * bx + ay * by;
    return std::abs(std::atan2(cross, dot)) * 180.0 / std::numbers::pi;
}

namespace detail
{

inline const std::vector<std::pair<int, int>> &neighbor_offsets(int neighborhood)
{
    static const std::vector<std::pair<int, int>> n8{{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                                     {0, 1},   {1, -1}, {1, 0},  {1, 1}};
    static const std::vector<std::pair<int, int>> n16{{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1},  {1, -1},
                                                      {1, 0},   {1, 1},  {-2, -1}, {-2, 1}, {-1, -2}, {-1, 2},
                                                      {1, -2},  {1, 2},  {2, -1},  {2, 1}};
    return neighborhood == 16 ? n16 : n8;
}

// Working label of one pixel during the trace.
struct PathLabel
{
    double g = std::numeric_limits<double>::infinity();
    int count = -1;
    double angle = 0.0;
    double loss = 0.0;
    int anchor = -1;
};

// Ordering used for both queue selection and relaxation: (distance, diffraction count, index).
inline bool label_less(double ga, int ca, int ia, double gb, int cb, int ib)
{
    return std::tie(ga, ca, ia) < std::tie(gb, cb, ib);
}

// Shared pieces of the trace used by the heap implementation and by reference implementations.
class TraceState
{
  public:
    TraceState(const BinaryGrid &obstacles, Pixel bs, const GridSpec &spec, const DpmConfig &cfg)
        : obst_(obstacles), bs_(bs), spec_(spec), cfg_(cfg), n_(obstacles.rows()),
          labels_(std::size_t(n_) * n_), settled_(std::size_t(n_) * n_, 0), visible_(n_, n_, 0)
    {
        if (!obstacles.contains(bs.row, bs.col))
            throw std::invalid_argument("trace_dominant_paths: BS outside the grid");
        if (obstacles[bs])
            throw std::invalid_argument("trace_dominant_paths: BS inside an obstacle");
        const int bi = index(bs);
        for (int r = 0; r < n_; ++r)
            for (int c = 0; c < n_; ++c)
            {
                if (obstacles(r, c) || !line_of_sight(obstacles, bs, {r, c}))
                    continue;
                visible_(r, c) = 1;
                auto &l = labels_[index({r, c})];
                l.g = std::hypot(double(r - bs.row), double(c - bs.col)) * spec.pixel_len_m;
                l.count = 0;
                l.anchor = bi;
            }
    }

    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] int index(Pixel p) const { return p.row * n_ + p.col; }
    [[nodiscard]] Pixel pixel(int i) const { return {i / n_, i % n_}; }
    [[nodiscard]] const PathLabel &label(int i) const { return labels_[i]; }
    [[nodiscard]] bool settled(int i) const { return settled_[i] != 0; }
    void settle(int i) { settled_[i] = 1; }

    // Candidate label for v reached in a straight line from anchor p.
    [[nodiscard]] PathLabel via(int p, Pixel v) const
    {
        const Pixel pp = pixel(p);
        const auto &lp = labels_[p];
        const double seg = std::hypot(double(v.row - pp.row), double(v.col - pp.col)) * spec_.pixel_len_m;
        PathLabel out;
        out.anchor = p;
        if (pp == bs_)
        {
            out.g = seg;
            out.count = 0;
            return out;
        }
        const Pixel pa = pixel(lp.anchor);
        const double ang = turn_angle_deg(pp.col - pa.col, pp.row - pa.row, v.col - pp.col, v.row - pp.row);
        out.g = std::max(lp.g + seg, std::hypot(double(v.row - bs_.row), double(v.col - bs_.col)) * spec_.pixel_len_m);
        out.count = lp.count + 1;
        out.angle = lp.angle + ang;
        out.loss = lp.loss + cfg_.diffraction_term(out.count, ang);
        return out;
    }

    [[nodiscard]] bool visible(int from, Pixel v) const
    {
        const Pixel f = pixel(from);
        if (f == bs_)
            return visible_[v] != 0;
        return line_of_sight(obst_, f, v);
    }

    // Relax the edge u -> v; returns true when v's label improved.
    bool relax(int u, Pixel v)
    {
        const int vi = index(v);
        if (settled_[vi] || obst_[v] || visible_[v])
            return false;
        const Pixel pu = pixel(u);
        if (!line_of_sight(obst_, pu, v))
            return false;
        const int a = labels_[u].anchor;
        const PathLabel cand = visible(a, v) ? via(a, v) : via(u, v);
        auto &cur = labels_[vi];
        if (cur.count < 0 || label_less(cand.g, cand.count, cand.anchor, cur.g, cur.count, cur.anchor))
        {
            cur = cand;
            return true;
        }
        return false;
    }

    DominantPathField finish() const
    {
        DominantPathField f;
        f.spec = spec_;
        f.bs = bs_;
        f.dist_m = RealGrid(n_, n_, std::numeric_limits<double>::infinity());
        f.diff_count = Grid<int>(n_, n_, -1);
        f.diff_angle_sum_deg = RealGrid(n_, n_, 0.0);
        f.diff_loss_db = RealGrid(n_, n_, 0.0);
        f.anchor = Grid<int>(n_, n_, -1);
        f.reachable = BinaryGrid(n_, n_, 0);
        f.los = visible_;
        for (int i = 0; i < n_ * n_; ++i)
        {
            if (!settled_[i])
                continue;
            const auto &l = labels_[i];
            f.dist_m.at_index(i) = l.g;
            f.diff_count.at_index(i) = l.count;
            f.diff_angle_sum_deg.at_index(i) = l.angle;
            f.diff_loss_db.at_index(i) = l.loss;
            f.anchor.at_index(i) = l.anchor;
            f.reachable.at_index(i) = 1;
        }
        return f;
    }

    [[nodiscard]] const std::vector<std::pair<int, int>> &offsets() const { return neighbor_offsets(cfg_.neighborhood); }

  private:
    const BinaryGrid &obst_;
    Pixel bs_;
    GridSpec spec_;
    DpmConfig cfg_;
    int n_;
    std::vector<PathLabel> labels_;
    std::vector<std::uint8_t> settled_;
    BinaryGrid visible_;
};

} // namespace detail

inline DominantPathField trace_dominant_paths(const BinaryGrid &obstacles, const GridSpec &spec, Pixel bs,
                                              const DpmConfig &cfg)
{
    cfg.validate();
    detail::TraceState st(obstacles, bs, spec, cfg);
    const int n = st.n();

    using Key = std::tuple<double, int, int>; // (g, count, index)
    std::priority_queue<Key, std::vector<Key>, std::greater<>> open;
    for (int i = 0; i < n * n; ++i)
        if (st.label(i).count >= 0)
            open.emplace(st.label(i).g, st.label(i).count, i);

    while (!open.empty())
    {
        const auto [g, count, u] = open.top();
        open.pop();
        if (st.settled(u) || g != st.label(u).g || count != st.label(u).count)
            continue;
        st.settle(u);
        const Pixel pu = st.pixel(u);
        for (const auto &[dr, dc] : st.offsets())
        {
            const Pixel v{pu.row + dr, pu.col + dc};
            if (!obstacles.contains(v.row, v.col))
                continue;
            if (st.relax(u, v))
            {
                const auto &l = st.label(st.index(v));
                open.emplace(l.g, l.count, st.index(v));
            }
        }
    }
    return st.finish();
}

inline DominantPathField trace_dominant_paths(const CityScene &scene, bool with_cars, Position bs, const DpmConfig &cfg)
{
    return trace_dominant_paths(scene.obstacles(with_cars), scene.spec, to_pixel(bs, scene.spec.size_px), cfg);
}

// Pathloss in dB from a traced field; obstacles, unreachable pixels and too-deep paths sit at the floor.
inline RadioMap field_to_radiomap(const DominantPathField &field, const BinaryGrid &obstacles, const LinkBudget &budget,
                                  const DpmConfig &cfg)
{
    const int n = field.dist_m.rows();
    RadioMap map;
    map.spec = field.spec;
    map.bs = field.bs.center();
    map.pathloss_db = RealGrid(n, n, budget.noise_floor_db);
    map.path_len_m = field.dist_m;
    map.los = BinaryGrid(n, n, 0);
    map.truncated = BinaryGrid(n, n, 1);
    for (std::size_t i = 0; i < map.pathloss_db.size(); ++i)
    {
        const int count = field.diff_count.at_index(i);
        map.los.at_index(i) = std::uint8_t(count == 0);
        if (obstacles.at_index(i) || !field.reachable.at_index(i) || count > cfg.max_diff_count)
            continue;
        const double d = std::max(field.dist_m.at_index(i), cfg.min_distance_m);
        const double loss = cfg.fs_ref_loss_db + 10.0 * cfg.fs_exponent * std::log10(d) +
                            std::min(cfg.diff_loss_cap_db, field.diff_loss_db.at_index(i));
        const double pl = -loss;
        if (pl >= budget.noise_floor_db)
        {
            map.pathloss_db.at_index(i) = pl;
            map.truncated.at_index(i) = 0;
        }
    }
    return map;
}

// Re-apply the floor; a no-op on simulator output.
inline RadioMap clip_to_floor(RadioMap map, const LinkBudget &budget)
{
    for (std::size_t i = 0; i < map.pathloss_db.size(); ++i)
        if (map.pathloss_db.at_index(i) < budget.noise_floor_db)
        {
            map.pathloss_db.at_index(i) = budget.noise_floor_db;
            map.truncated.at_index(i) = 1;
        }
    return map;
}

// One radio map per BS of the scene's pool.
inline std::vector<RadioMap> simulate_scene(const CityScene &scene, bool with_cars, const LinkBudget &budget,
                                            const DpmConfig &cfg, int jobs = 1)
{
    budget.validate();
    const auto obst = scene.obstacles(with_cars);
    std::vector<RadioMap> maps(scene.bs.size());
    parallel_for(scene.bs.size(), jobs, [&](std::size_t k) {
        const auto field = trace_dominant_paths(obst, scene.spec, to_pixel(scene.bs[k], scene.spec.size_px), cfg);
        maps[k] = field_to_radiomap(field, obst, budget, cfg);
    });
    return maps;
}

} // namespace radioloc
