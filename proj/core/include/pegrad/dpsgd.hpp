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

#include "pegrad/strategies.hpp"

namespace pegrad {

// Per-step DPSGD configuration. There is deliberately no privacy accountant:
// the noise multiplier is raw configuration and the (epsilon, delta)
// judgment stays with the caller.
template <typename T>
struct DpConfig {
  T clip_norm = T(1);          // C > 0
  T noise_multiplier = T(0);   // sigma >= 0; noise stddev is sigma*C
  T learning_rate = T(0.1);
  int64_t microbatch = 1;      // m; examples averaged before clipping
  uint64_t seed = 0;
};

template <typename T>
void validate(const DpConfig<T>& cfg, int64_t batch);

template <typename T>
struct StepReport {
  Tensor<T> pre_clip_norms;  // one per clipped unit (B, or B/m)
  int64_t clipped_count = 0;
  std::vector<uint64_t> noise_streams;
};

// g_i <- g_i * min(1, C / ||g_i||), the norm taken over the concatenation of
// all parameter blocks. norms_only inputs are a contract error (clipping
// needs materialized gradients; the norms path goes through clip_scales).
template <typename T>
PerExampleGrads<T> clip(const PerExampleGrads<T>& grads, T clip_norm,
                        StepReport<T>* report = nullptr);

// scale_i = min(1, C / norm_i), with scale 1 at norm 0.
template <typename T>
Tensor<T> clip_scales(const Tensor<T>& norms, T clip_norm);

// Mean gradients over groups of m consecutive examples; m = 1 is the
// identity, m = B collapses to ordinary clipped batch SGD.
template <typename T>
PerExampleGrads<T> microbatch(const PerExampleGrads<T>& grads, int64_t m);

// (sum_i g_i + N(0, (sigma C)^2 I)) / units, one noise stream per parameter
// block per step. sigma = 0 adds nothing and is exactly the clipped mean.
template <typename T>
std::vector<Tensor<T>> aggregate_noise(const PerExampleGrads<T>& clipped,
                                       const DpConfig<T>& cfg,
                                       int64_t step_index,
                                       std::vector<uint64_t>* streams_used);

// One full update: strategy -> microbatch -> clip -> noise -> step.
// Norms-only engines take the weighted-second-backward route and require
// m == 1.
template <typename T>
StepReport<T> dpsgd_step(models::Model<T>& model, GradEngine<T>& engine,
                         const Tensor<T>& x, const Tensor<T>& y,
                         const DpConfig<T>& cfg, int64_t step_index);

// Non-private baseline: params -= lr * mean batch gradient.
template <typename T>
void sgd_step(models::Model<T>& model, GradEngine<T>& engine,
              const Tensor<T>& x, const Tensor<T>& y, T learning_rate);

}  // namespace pegrad
