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

// Small simulation setups shared by the tests.

#include "radioloc/dataset.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace fixture
{

using namespace radioloc;

// 64x64 cities with 1 m pixels and a small deployment plan.
inline SimulationConfig tiny(int n_maps = 6, std::uint64_t seed = 1)
{
    SimulationConfig c;
    auto &s = c.scenes;
    s.seed = seed;
    s.n_maps = n_maps;
    s.grid.size_px = 64;
    s.street_pitch_px = 16;
    s.street_width_min_px = 4;
    s.street_width_max_px = 6;
    s.n_cars = 20;
    s.n_bs_pool = 6;
    s.n_ue = 12;
    s.n_deployments = 3;
    s.bs_per_deployment = 3;
    return c;
}

// Fresh temporary directory removed on destruction.
struct TempDir
{
    std::filesystem::path path;

    explicit TempDir(const std::string &tag)
    {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("radioloc_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
};

} // namespace fixture
