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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace radioloc
{

// Seeded engine derived from a tuple of integers (global seed, stream tag, indices...).
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys)
{
    std::vector<std::uint32_t> words;
    words.reserve(keys.size() * 2);
    for (auto k : keys)
    {
        words.push_back(std::uint32_t(k & 0xffffffffu));
        words.push_back(std::uint32_t(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

// Stream tags keep independent random streams apart for the same indices.
namespace stream
{
inline constexpr std::uint64_t city = 0x43495459;
inline constexpr std::uint64_t cars = 0x43415253;
inline constexpr std::uint64_t deploy = 0x4445504c;
inline constexpr std::uint64_t split = 0x53504c54;
inline constexpr std::uint64_t toa_noise = 0x544f414e;
inline constexpr std::uint64_t subset = 0x53554253;
inline constexpr std::uint64_t init = 0x494e4954;
inline constexpr std::uint64_t shuffle = 0x53485546;
} // namespace stream

} // namespace radioloc
