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

#include <cstddef>

namespace pegrad::detail {

// Size-bucketed recycling of tensor storage. Large buffers churn every
// training step; reusing them avoids repeated page-fault costs. Thread-safe.
void* pool_acquire(size_t bytes);               // nullptr on miss
void pool_release(void* p, size_t bytes);       // recycles or frees

}  // namespace pegrad::detail
