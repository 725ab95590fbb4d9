// Copyright (c) 2026 The pegrad Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "pegrad/tape.hpp"

namespace pegrad {

enum class InAxis {
  lead,       // input gains a leading batch axis
  unbatched,  // input shared across the batch
};

// Vectorized map: lifts a per-example tape to a batched tape by rewriting
// each primitive with its batching rule. Batched values carry the batch
// extent as a new leading axis; parameters and constants stay shared. The
// node count of the result does not depend on the batch extent, which is
// what removes the per-example interpreter loop.
//
// in_axes has one entry per tape input (missing entries default to lead).
// Outputs keep their names; an output untouched by the batch is broadcast so
// every output has leading extent `batch`.
Tape vmap(const Tape& src, int64_t batch, const std::vector<InAxis>& in_axes);

}  // namespace pegrad
