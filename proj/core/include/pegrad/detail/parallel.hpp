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

#include <cstdint>

namespace pegrad::detail {

// Runs fn(ctx, lo, hi) over a fixed two-way split of [0, n) using one
// persistent helper thread. Each index is processed by exactly one thread
// with the same per-index instruction sequence as the sequential loop, so
// results are bitwise identical either way. Returns false (caller runs
// sequentially) when the helper is unavailable or already busy.
bool parallel_try_run(int64_t n, void (*fn)(void*, int64_t, int64_t),
                      void* ctx);

}  // namespace pegrad::detail
