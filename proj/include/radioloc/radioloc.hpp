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

// Umbrella header.

#include "radioloc/dataset.hpp"
#include "radioloc/dpm.hpp"
#include "radioloc/errors.hpp"
#include "radioloc/eval.hpp"
#include "radioloc/fingerprint.hpp"
#include "radioloc/grid.hpp"
#include "radioloc/io.hpp"
#include "radioloc/locnet.hpp"
#include "radioloc/nn/ops.hpp"
#include "radioloc/nn/optim.hpp"
#include "radioloc/nn/tensor.hpp"
#include "radioloc/parallel.hpp"
#include "radioloc/pipeline.hpp"
#include "radioloc/random.hpp"
#include "radioloc/scene.hpp"
#include "radioloc/toa.hpp"
