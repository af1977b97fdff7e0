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

// Grid and geometry types shared by every module, plus the dB / dBm / gray-level conversions.
//
// Coordinate convention: pixel centers sit at integer coordinates 1..size_px on both axes.
// x runs along columns, y along rows. A Grid stores row-major data with (row, col) 0-based.

#include "radioloc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace radioloc
{

struct GridSpec
{
    int size_px = 256;        // pixels per side
    double pixel_len_m = 1.0; // meters per pixel

    void validate() const
    {
        if (size_px < 16)
            throw std::invalid_argument("GridSpec: size_px must be at least 16");
        if (!(pixel_len_m > 0.0))
            throw std::invalid_argument("GridSpec: pixel_len_m must be positive");
    }

    [[nodiscard]] double diagonal_m() const { return std::sqrt(2.0) * pixel_len_m; }

    bool operator==(const GridSpec &) const = default;
};

// Continuous pixel coordinates; integer values are pixel centers.
struct Position
{
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Position &) const = default;
};

inline double distance_px(Position a, Position b)
{
    return std::hypot(a.x - b.x, a.y - b.y);
}

inline double distance_m(Position a, Position b, const GridSpec &spec)
{
    return distance_px(a, b) * spec.pixel_len_m;
}

// Integer pixel address, 0-based.
struct Pixel
{
    int row = 0;
    int col = 0;

    bool operator==(const Pixel &) const = default;

    [[nodiscard]] Position center() const { return {double(col + 1), double(row + 1)}; }
};

// Nearest pixel to a continuous position (clamped to the grid).
inline Pixel to_pixel(Position p, int size_px)
{
    int col = int(std::lround(p.x)) - 1;
    int row = int(std::lround(p.y)) - 1;
    return {std::clamp(row, 0, size_px - 1), std::clamp(col, 0, size_px - 1)};
}

template <class T>
class Grid
{
  public:
    Grid() = default;
    Grid(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, fill)
    {
        if (rows < 0 || cols < 0)
            throw std::invalid_argument("Grid: negative dimension");
    }

    [[nodiscard]] int rows() const { return rows_; }
    [[nodiscard]] int cols() const { return cols_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T &operator()(int row, int col) { return data_[std::size_t(row) * cols_ + col]; }
    const T &operator()(int row, int col) const { return data_[std::size_t(row) * cols_ + col]; }
    T &operator[](Pixel p) { return (*this)(p.row, p.col); }
    const T &operator[](Pixel p) const { return (*this)(p.row, p.col); }
    T &at_index(std::size_t i) { return data_[i]; }
    const T &at_index(std::size_t i) const { return data_[i]; }

    [[nodiscard]] bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < rows_ && col < cols_; }

    std::vector<T> &data() { return data_; }
    const std::vector<T> &data() const { return data_; }

    bool operator==(const Grid &) const = default;

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

using BinaryGrid = Grid<std::uint8_t>;
using RealGrid = Grid<double>;

struct LinkBudget
{
    double tx_power_dbm = 23.0;
    double noise_psd_dbm_hz = -174.0;
    double bandwidth_hz = 10e6;
    double noise_floor_db = -134.0; // pathloss truncation threshold
    double carrier_ghz = 5.9;

    void validate() const
    {
        if (!(bandwidth_hz > 0.0))
            throw std::invalid_argument("LinkBudget: bandwidth must be positive");
        if (!(noise_floor_db < 0.0))
            throw std::invalid_argument("LinkBudget: noise floor must be negative");
        if (!(carrier_ghz > 0.0))
            throw std::invalid_argument("LinkBudget: carrier must be positive");
    }

    bool operator==(const LinkBudget &) const = default;
};

struct RadioMap
{
    GridSpec spec;
    Position bs;
    RealGrid pathloss_db;  // non-positive, clipped at the noise floor
    RealGrid path_len_m;   // dominant path length
    BinaryGrid los;        // direct visibility from the BS
    BinaryGrid truncated;  // pathloss clipped at the floor

    [[nodiscard]] double at(Position p) const { return pathloss_db[to_pixel(p, spec.size_px)]; }

    bool operator==(const RadioMap &) const = default;
};

inline double pathloss_to_rss(double pl_db, const LinkBudget &budget) { return pl_db + budget.tx_power_dbm; }

inline double rss_to_pathloss(double rss_dbm, const LinkBudget &budget) { return rss_dbm - budget.tx_power_dbm; }

// Affine map noise floor -> 0, 0 dB -> 1. Not clamped; callers feed truncated values.
inline double to_gray(double pl_db, const LinkBudget &budget)
{
    return (pl_db - budget.noise_floor_db) / -budget.noise_floor_db;
}

inline double from_gray(double gray, const LinkBudget &budget)
{
    return budget.noise_floor_db + gray * -budget.noise_floor_db;
}

inline RealGrid to_gray(const RadioMap &map, const LinkBudget &budget)
{
    RealGrid out(map.pathloss_db.rows(), map.pathloss_db.cols());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.at_index(i) = to_gray(map.pathloss_db.at_index(i), budget);
    return out;
}

// Number of links whose pathloss lies strictly above floor + margin.
inline int count_detectable(std::span<const double> pl, const LinkBudget &budget, double margin_db)
{
    if (margin_db < 0.0)
        throw std::invalid_argument("count_detectable: margin must be non-negative");
    const double threshold = budget.noise_floor_db + margin_db;
    return int(std::count_if(pl.begin(), pl.end(), [&](double v) { return v > threshold; }));
}

// Inclusive 0-based pixel range of a centered box of side `box` (scaled from a 256 reference grid).
struct Box
{
    int lo = 0;
    int hi = 0; // inclusive

    [[nodiscard]] bool contains(Pixel p) const { return p.row >= lo && p.row <= hi && p.col >= lo && p.col <= hi; }
    [[nodiscard]] bool contains(Position p) const
    {
        return p.x >= lo + 1 && p.x <= hi + 1 && p.y >= lo + 1 && p.y <= hi + 1;
    }
};

inline Box central_box(int size_px, int box_at_256)
{
    int side = size_px == 256 ? box_at_256 : int(std::lround(double(box_at_256) * size_px / 256.0));
    side = std::clamp(side, 1, size_px);
    const int lo = (size_px - side) / 2;
    return {lo, lo + side - 1};
}

inline Box bs_box(int size_px) { return central_box(size_px, 150); }
inline Box ue_box(int size_px) { return central_box(size_px, 164); }

// Block-average downsampling by an integer factor.
inline RealGrid downsample_mean(const RealGrid &g, int factor)
{
    if (factor < 1 || g.rows() % factor != 0 || g.cols() % factor != 0)
        throw std::invalid_argument("downsample_mean: grid not divisible by factor");
    RealGrid out(g.rows() / factor, g.cols() / factor);
    const double inv = 1.0 / double(factor * factor);
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c)
        {
            double s = 0.0;
            for (int i = 0; i < factor; ++i)
                for (int j = 0; j < factor; ++j)
                    s += g(r * factor + i, c * factor + j);
            out(r, c) = s * inv;
        }
    return out;
}

// Continuous coordinate on a fine grid -> coordinate on a grid coarser by `factor`, and back.
// Coarse pixel i (1-based) covers fine pixels factor*(i-1)+1 .. factor*i.
inline Position fine_to_coarse(Position p, int factor)
{
    const double off = (factor - 1) / 2.0;
    return {(p.x + off) / factor, (p.y + off) / factor};
}

inline Position coarse_to_fine(Position p, int factor)
{
    const double off = (factor - 1) / 2.0;
    return {p.x * factor - off, p.y * factor - off};
}

} // namespace radioloc
