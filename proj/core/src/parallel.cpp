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

#include "pegrad/detail/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace pegrad::detail {

namespace {

// One lazily started helper thread shared process-wide. Concurrent callers
// do not queue: whoever fails the try_lock just runs sequentially, which is
// result-identical.
class Helper {
 public:
  static Helper& instance() {
    // Intentionally immortal: the detached worker may still be parked on
    // the condition variable when static destructors run.
    static Helper* h = new Helper();
    return *h;
  }

  bool try_run(int64_t n, void (*fn)(void*, int64_t, int64_t), void* ctx) {
    if (!enabled_) return false;
    std::unique_lock<std::mutex> guard(busy_, std::try_to_lock);
    if (!guard.owns_lock()) return false;
    const int64_t mid = n / 2;
    {
      std::lock_guard<std::mutex> lk(m_);
      fn_ = fn;
      ctx_ = ctx;
      lo_ = mid;
      hi_ = n;
      has_work_.store(true, std::memory_order_release);
    }
    cv_.notify_one();
    fn(ctx, 0, mid);
    // The helper half finishes at about the same time; a brief spin skips
    // the wakeup latency on the common path.
    for (int i = 0; i < 20000; ++i) {
      if (!has_work_.load(std::memory_order_acquire)) return true;
#if defined(__x86_64__)
      __builtin_ia32_pause();
#endif
    }
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [&] { return !has_work_.load(); });
    return true;
  }

 private:
  Helper() {
    enabled_ = std::thread::hardware_concurrency() >= 2 &&
               std::getenv("PEGRAD_SINGLE_THREAD") == nullptr;
    if (enabled_) {
      worker_ = std::thread([this] { loop(); });
      worker_.detach();
    }
  }

  void loop() {
    for (;;) {
      std::unique_lock<std::mutex> lk(m_);
      cv_.wait(lk, [&] { return has_work_.load(); });
      auto fn = fn_;
      void* ctx = ctx_;
      const int64_t lo = lo_, hi = hi_;
      lk.unlock();
      fn(ctx, lo, hi);
      {
        std::lock_guard<std::mutex> done(m_);
        has_work_.store(false, std::memory_order_release);
      }
      done_cv_.notify_one();
    }
  }

  bool enabled_ = false;
  std::thread worker_;
  std::mutex busy_;
  std::mutex m_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  void (*fn_)(void*, int64_t, int64_t) = nullptr;
  void* ctx_ = nullptr;
  int64_t lo_ = 0, hi_ = 0;
  std::atomic<bool> has_work_{false};
};

}  // namespace

bool parallel_try_run(int64_t n, void (*fn)(void*, int64_t, int64_t),
                      void* ctx) {
  if (n < 2) return false;
  return Helper::instance().try_run(n, fn, ctx);
}

}  // namespace pegrad::detail
