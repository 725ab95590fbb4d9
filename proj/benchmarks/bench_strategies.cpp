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

// Per-step cost of each per-example gradient strategy and of the full DPSGD
// update on the fully-connected benchmark network.

#include <benchmark/benchmark.h>

#include "pegrad/dpsgd.hpp"
#include "pegrad/harness.hpp"

using namespace pegrad;

namespace {

struct Setup {
  models::Model<float> model;
  io::Batch<float> batch;
};

Setup make_setup(int64_t batch_size) {
  auto model = models::build<float>(models::ModelKind::fcnn, 0);
  auto data = io::synth_for_model<float>(model.desc, batch_size, 0);
  return {std::move(model), io::slice_batch(data, 0, batch_size)};
}

void BM_StrategyCompute(benchmark::State& state, Strategy strategy,
                        ExecMode mode) {
  const int64_t B = state.range(0);
  Setup s = make_setup(B);
  GradEngine<float> engine(s.model, strategy, B, mode);
  for (auto _ : state) {
    auto grads = engine.compute(s.batch.x, s.batch.y, s.model.params);
    benchmark::DoNotOptimize(grads.batch);
  }
  state.SetItemsProcessed(state.iterations() * B);
}

void BM_DpsgdStep(benchmark::State& state, Strategy strategy, ExecMode mode) {
  const int64_t B = state.range(0);
  Setup s = make_setup(B);
  GradEngine<float> engine(s.model, strategy, B, mode);
  DpConfig<float> cfg;
  cfg.noise_multiplier = 0.5f;
  int64_t step = 0;
  for (auto _ : state) {
    dpsgd_step(s.model, engine, s.batch.x, s.batch.y, cfg, step++);
  }
  state.SetItemsProcessed(state.iterations() * B);
}

}  // namespace

BENCHMARK_CAPTURE(BM_StrategyCompute, naive_eager, Strategy::naive,
                  ExecMode::eager)
    ->Arg(16)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_StrategyCompute, naive_graph, Strategy::naive,
                  ExecMode::graph)
    ->Arg(16)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_StrategyCompute, vmap_eager, Strategy::vmap,
                  ExecMode::eager)
    ->Arg(16)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_StrategyCompute, vmap_graph, Strategy::vmap,
                  ExecMode::graph)
    ->Arg(16)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_StrategyCompute, outer_graph, Strategy::outer,
                  ExecMode::graph)
    ->Arg(16)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_StrategyCompute, norms_graph, Strategy::norms,
                  ExecMode::graph)
    ->Arg(16)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_StrategyCompute, jacmm_graph, Strategy::jacmm,
                  ExecMode::graph)
    ->Arg(16)
    ->Arg(128);

BENCHMARK_CAPTURE(BM_DpsgdStep, naive_eager, Strategy::naive, ExecMode::eager)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_DpsgdStep, vmap_eager, Strategy::vmap, ExecMode::eager)
    ->Arg(128);
BENCHMARK_CAPTURE(BM_DpsgdStep, vmap_graph, Strategy::vmap, ExecMode::graph)
    ->Arg(128);

BENCHMARK_MAIN();
