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

// Reference implementations used only by the tests.

#include "radioloc/dpm.hpp"
#include "radioloc/toa.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace oracle
{

using namespace radioloc;

// Dominant-path trace with linear-scan selection instead of a heap: O(V^2).
inline DominantPathField naive_trace(const BinaryGrid &obstacles, const GridSpec &spec, Pixel bs, const DpmConfig &cfg)
{
    detail::TraceState st(obstacles, bs, spec, cfg);
    const int n = st.n();
    while (true)
    {
        int best = -1;
        for (int i = 0; i < n * n; ++i)
        {
            if (st.settled(i) || st.label(i).count < 0)
                continue;
            const auto &l = st.label(i);
            if (best < 0 || detail::label_less(l.g, l.count, i, st.label(best).g, st.label(best).count, best))
                best = i;
        }
        if (best < 0)
            break;
        st.settle(best);
        const Pixel pu = st.pixel(best);
        for (const auto &[dr, dc] : st.offsets())
        {
            const Pixel v{pu.row + dr, pu.col + dc};
            if (obstacles.contains(v.row, v.col))
                st.relax(best, v);
        }
    }
    return st.finish();
}

// Supercover by exhaustive cell test: a cell blocks when the closed segment between the two
// centers meets the closed cell square. Coordinates are doubled so everything stays integral.
inline bool brute_line_of_sight(const BinaryGrid &obstacles, Pixel a, Pixel b)
{
    const long px = 2L * a.col, py = 2L * a.row, qx = 2L * b.col, qy = 2L * b.row;
    const long dx = qx - px, dy = qy - py;
    for (int r = 0; r < obstacles.rows(); ++r)
        for (int c = 0; c < obstacles.cols(); ++c)
        {
            if (!obstacles(r, c))
                continue;
            const long x0 = 2L * c - 1, x1 = 2L * c + 1, y0 = 2L * r - 1, y1 = 2L * r + 1;
            if (std::max(px, qx) < x0 || std::min(px, qx) > x1 || std::max(py, qy) < y0 || std::min(py, qy) > y1)
                continue;
            int pos = 0, neg = 0;
            for (long cx : {x0, x1})
                for (long cy : {y0, y1})
                {
                    const long cr = dx * (cy - py) - dy * (cx - px);
                    pos += cr > 0;
                    neg += cr < 0;
                }
            if (pos == 4 || neg == 4)
                continue;
            return false;
        }
    return true;
}

// Plain 8-connected grid Dijkstra (octile metric); an upper bound on any-angle distances.
inline RealGrid octile_distance(const BinaryGrid &obstacles, Pixel bs, double pixel_len_m)
{
    const int n = obstacles.rows();
    RealGrid d(n, n, std::numeric_limits<double>::infinity());
    std::vector<std::uint8_t> done(std::size_t(n) * n, 0);
    d[bs] = 0.0;
    while (true)
    {
        int best = -1;
        for (int i = 0; i < n * n; ++i)
            if (!done[i] && std::isfinite(d.at_index(i)) && (best < 0 || d.at_index(i) < d.at_index(best)))
                best = i;
        if (best < 0)
            break;
        done[best] = 1;
        const int r = best / n, c = best % n;
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc)
            {
                if ((dr == 0 && dc == 0) || !obstacles.contains(r + dr, c + dc) || obstacles(r + dr, c + dc))
                    continue;
                // diagonal moves may not cut an obstacle corner
                if (dr != 0 && dc != 0 && (obstacles(r + dr, c) || obstacles(r, c + dc)))
                    continue;
                const double w = (dr != 0 && dc != 0 ? std::sqrt(2.0) : 1.0) * pixel_len_m;
                double &t = d(r + dr, c + dc);
                t = std::min(t, d.at_index(best) + w);
            }
    }
    return d;
}

// Dense grid search of a 2-D objective over [lo, hi]^2, refined around the best cell.
inline Position grid_search(const std::function<double(Position)> &f, double lo, double hi, double step,
                            double final_step)
{
    Position best{lo, lo};
    double fb = std::numeric_limits<double>::infinity();
    double x0 = lo, x1 = hi, y0 = lo, y1 = hi;
    while (true)
    {
        for (double x = x0; x <= x1 + 1e-12; x += step)
            for (double y = y0; y <= y1 + 1e-12; y += step)
            {
                const double v = f({x, y});
                if (v < fb)
                {
                    fb = v;
                    best = {x, y};
                }
            }
        if (step <= final_step)
            return best;
        x0 = best.x - step;
        x1 = best.x + step;
        y0 = best.y - step;
        y1 = best.y + step;
        step = std::max(final_step, step / 10.0);
    }
}

// Squared-range least-squares objective.
inline double srls_cost(const RangingProblem &p, Position x)
{
    double s = 0.0;
    for (std::size_t j = 0; j < p.anchors.size(); ++j)
    {
        const double dx = x.x - p.anchors[j].x, dy = x.y - p.anchors[j].y;
        const double e = dx * dx + dy * dy - p.ranges_m[j] * p.ranges_m[j];
        s += e * e;
    }
    return s;
}

// Range least squares restricted to a subset of links.
inline double range_cost(const RangingProblem &p, Position x, const std::vector<int> &links)
{
    double s = 0.0;
    for (int j : links)
    {
        const double e = distance_px(x, p.anchors[j]) - p.ranges_m[j];
        s += e * e;
    }
    return s;
}

// Central finite-difference gradient of f with respect to every entry of v.
inline std::vector<double> fd_gradient(std::vector<double> &v, const std::function<double()> &f, double eps)
{
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
    {
        const double keep = v[i];
        v[i] = keep + eps;
        const double fp = f();
        v[i] = keep - eps;
        const double fm = f();
        v[i] = keep;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// Largest |a - b| / max(|a|, |b|, floor) over two gradients.
inline double max_rel_error(const std::vector<double> &a, const std::vector<double> &b, double floor = 1e-6)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    return worst;
}

} // namespace oracle
