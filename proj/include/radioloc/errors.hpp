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

#include <stdexcept>
#include <string>

namespace radioloc
{

// Infeasible or inconsistent configuration (generator cannot satisfy its constraints).
struct ConfigError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// Dataset file errors: each failure mode is its own type so callers can react differently.
struct MalformedFileError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct VersionMismatchError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct ChecksumError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct MissingProductError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// Ranging solvers
struct InsufficientAnchorsError : std::invalid_argument
{
    using std::invalid_argument::invalid_argument;
};

struct DegenerateGeometryError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// CoM readout on a heatmap whose total mass vanishes
struct DegenerateHeatmapError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

} // namespace radioloc
