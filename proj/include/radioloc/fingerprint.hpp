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

// RSS fingerprinting: kNN and adaptive kNN over the estimated radio maps.

#include "radioloc/dataset.hpp"
#include "radioloc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace radioloc
{

enum class CandidateMask
{
    FreePixels, // free pixels inside the UE box
    AllPixels,
};

struct KnnConfig
{
    int k = 16;
    CandidateMask mask = CandidateMask::FreePixels;
};

struct AdaptiveKnnConfig
{
    double alpha = 0.05; // relative slack on the smallest signal distance
    int k_max = 40;
    CandidateMask mask = CandidateMask::FreePixels;
};

// Euclidean norm of the residuals in dB.
inline double signal_distance(std::span<const double> meas, std::span<const double> fingerprint)
{
    if (meas.size() != fingerprint.size())
        throw std::invalid_argument("signal_distance: length mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < meas.size(); ++j)
    {
        const double d = meas[j] - fingerprint[j];
        s += d * d;
    }
    return std::sqrt(s);
}

// Row-major flat indices of the candidate pixels.
inline std::vector<int> candidate_pixels(const LocalizationInstance &inst, CandidateMask mask)
{
    if (inst.est_maps.empty())
        throw std::invalid_argument("candidate_pixels: instance has no maps");
    const int n = inst.est_maps.front()->spec.size_px;
    std::vector<int> out;
    if (mask == CandidateMask::AllPixels)
    {
        out.resize(std::size_t(n) * n);
        std::iota(out.begin(), out.end(), 0);
        return out;
    }
    const Box box = ue_box(n);
    for (int r = box.lo; r <= box.hi; ++r)
        for (int c = box.lo; c <= box.hi; ++c)
            if (!inst.city || !(*inst.city)(r, c))
                out.push_back(r * n + c);
    return out;
}

struct ScoredPixel
{
    double dist;
    int index;

    bool operator<(const ScoredPixel &o) const { return dist < o.dist || (dist == o.dist && index < o.index); }
};

inline std::vector<ScoredPixel> score_candidates(const LocalizationInstance &inst, CandidateMask mask)
{
    const auto cand = candidate_pixels(inst, mask);
    if (cand.empty())
        throw std::invalid_argument("knn: empty candidate set");
    if (inst.measured_pl.size() != inst.est_maps.size())
        throw std::invalid_argument("knn: measurement and map counts differ");
    const std::size_t J = inst.est_maps.size();
    std::vector<ScoredPixel> out(cand.size());
    std::vector<double> fp(J);
    for (std::size_t i = 0; i < cand.size(); ++i)
    {
        for (std::size_t j = 0; j < J; ++j)
            fp[j] = inst.est_maps[j]->pathloss_db.at_index(std::size_t(cand[i]));
        out[i] = {signal_distance(inst.measured_pl, fp), cand[i]};
    }
    return out;
}

inline Position centroid_of(std::span<const ScoredPixel> pts, int n)
{
    double sx = 0.0, sy = 0.0;
    for (const auto &p : pts)
    {
        sx += p.index % n + 1;
        sy += p.index / n + 1;
    }
    return {sx / double(pts.size()), sy / double(pts.size())};
}

// Unweighted centroid of the k best-matching candidates; ties go to the lower pixel index.
inline Position knn_localize(const LocalizationInstance &inst, const KnnConfig &cfg)
{
    if (cfg.k < 1)
        throw std::invalid_argument("knn_localize: k must be >= 1");
    auto scored = score_candidates(inst, cfg.mask);
    if (std::size_t(cfg.k) > scored.size())
        throw std::invalid_argument("knn_localize: k exceeds the number of candidates");
    std::partial_sort(scored.begin(), scored.begin() + cfg.k, scored.end());
    return centroid_of(std::span(scored).first(std::size_t(cfg.k)), inst.est_maps.front()->spec.size_px);
}

struct AdaptiveKnnResult
{
    Position estimate;
    int k_used = 0;
};

// Every candidate within (1 + alpha) of the best distance, at most k_max of them.
inline AdaptiveKnnResult adaptive_knn_localize(const LocalizationInstance &inst, const AdaptiveKnnConfig &cfg)
{
    if (!(cfg.alpha >= 0.0) || cfg.k_max < 1)
        throw std::invalid_argument("adaptive_knn_localize: need alpha >= 0 and k_max >= 1");
    auto scored = score_candidates(inst, cfg.mask);
    const int kmax = std::min<int>(cfg.k_max, int(scored.size()));
    std::partial_sort(scored.begin(), scored.begin() + kmax, scored.end());
    const double limit = (1.0 + cfg.alpha) * scored.front().dist;
    int k = 1;
    while (k < kmax && scored[k].dist <= limit)
        ++k;
    return {centroid_of(std::span(scored).first(std::size_t(k)), inst.est_maps.front()->spec.size_px), k};
}

} // namespace radioloc
