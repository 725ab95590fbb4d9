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

#include <benchmark/benchmark.h>

#include <memory>

#include "pegrad/autodiff.hpp"
#include "pegrad/executor.hpp"
#include "pegrad/graph_opt.hpp"
#include "pegrad/tensor_ops.hpp"

using namespace pegrad;

namespace {

Tensor<float> random_f(Shape shape, uint64_t stream) {
  RngState rng(1, stream);
  return uniform<float>(shape, -1.f, 1.f, rng);
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = random_f({n, n}, 0);
  auto b = random_f({n, n}, 1);
  for (auto _ : state) {
    auto c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dIm2col(benchmark::State& state) {
  const int64_t batch = state.range(0);
  auto x = random_f({batch, 16, 14, 14}, 0);
  auto w = random_f({32, 16, 4, 4}, 1);
  for (auto _ : state) {
    auto y = conv2d(x, w, 1, 0);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Conv2dIm2col)->Arg(1)->Arg(16)->Arg(64);

// The elementwise chain relu(x*a + b), unfused op-by-op vs. one fused loop
// through the optimizer.
void BM_ChainUnfused(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto x = random_f({n}, 0);
  auto a = random_f({n}, 1);
  auto b = random_f({n}, 2);
  for (auto _ : state) {
    auto y = ew_unary(EwUnaryKind::relu,
                      ew_binary(EwBinaryKind::add,
                                ew_binary(EwBinaryKind::mul, x, a), b));
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ChainUnfused)->Arg(1 << 12)->Arg(1 << 16)->Arg(1 << 20);

void BM_ChainFused(benchmark::State& state) {
  const int64_t n = state.range(0);
  Tape t = record([&](TapeBuilder& tb) {
    Var x = tb.input({n}, "x");
    Var a = tb.param({n}, "a");
    Var b = tb.param({n}, "b");
    tb.mark_output(tb.relu(tb.add(tb.mul(x, a), b)), "y");
  });
  Executor<float> ex(optimize(t));
  auto x = random_f({n}, 0);
  auto a = random_f({n}, 1);
  auto b = random_f({n}, 2);
  for (auto _ : state) {
    auto y = ex.run({a, b}, {x});
    benchmark::DoNotOptimize(y[0].data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ChainFused)->Arg(1 << 12)->Arg(1 << 16)->Arg(1 << 20);

void BM_GaussianFill(benchmark::State& state) {
  const int64_t n = state.range(0);
  uint64_t stream = 0;
  for (auto _ : state) {
    RngState rng(9, ++stream);
    auto g = gaussian<float>({n}, rng);
    benchmark::DoNotOptimize(g.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_GaussianFill)->Arg(5760)->Arg(1 << 18);

}  // namespace

BENCHMARK_MAIN();
