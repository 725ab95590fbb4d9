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

#include "pegrad/detail/buffer_pool.hpp"

#include <cstdint>
#include <mutex>
#include <new>
#include <unordered_map>
#include <vector>

namespace pegrad::detail {

namespace {

// Only sizes worth the bookkeeping are pooled; small blocks are cheap to
// obtain from the system allocator.
constexpr size_t kMinPooledBytes = 1 << 15;
constexpr size_t kMaxPerBucket = 8;
constexpr size_t kMaxPoolBytes = size_t(512) << 20;

struct Pool {
  std::mutex m;
  std::unordered_map<size_t, std::vector<void*>> buckets;
  size_t held_bytes = 0;
};

Pool& pool() {
  static Pool* p = new Pool();  // immortal
  return *p;
}

}  // namespace

void* pool_acquire(size_t bytes) {
  if (bytes < kMinPooledBytes) return nullptr;
  Pool& p = pool();
  std::lock_guard<std::mutex> lk(p.m);
  auto it = p.buckets.find(bytes);
  if (it == p.buckets.end() || it->second.empty()) return nullptr;
  void* raw = it->second.back();
  it->second.pop_back();
  p.held_bytes -= bytes;
  return raw;
}

void pool_release(void* raw, size_t bytes) {
  if (bytes >= kMinPooledBytes) {
    Pool& p = pool();
    std::lock_guard<std::mutex> lk(p.m);
    auto& bucket = p.buckets[bytes];
    if (bucket.size() < kMaxPerBucket &&
        p.held_bytes + bytes <= kMaxPoolBytes) {
      bucket.push_back(raw);
      p.held_bytes += bytes;
      return;
    }
  }
  ::operator delete(raw);
}

}  // namespace pegrad::detail
