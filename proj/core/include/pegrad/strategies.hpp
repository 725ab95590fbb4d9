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

#include <memory>

#include "pegrad/executor.hpp"
#include "pegrad/models.hpp"

namespace pegrad {

// Per-example gradient computation strategies:
//   naive      B independent backward passes (the reference semantics)
//   vmap       one batched backward via the vectorized-map transform
//   outer      dense-only: weight grads as cotangent x activation outer
//              products from one shared backward sweep
//   norms      dense-only: per-example l2 norms only, no (B x params) block
//   groupconv  conv nets: batched correlation of saved input patches with
//              output cotangents (plus the outer rule for dense tails)
//   jacmm      one backward sweep carrying the per-example cotangent matrix;
//              a transposed-Jacobian product rule per layer kind
enum class Strategy { naive, vmap, outer, norms, groupconv, jacmm };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);
std::vector<Strategy> all_strategies();

// Stacked per-parameter gradients (leading axis = example), or only the
// per-example total l2 norms when norms_only is set.
template <typename T>
struct PerExampleGrads {
  bool norms_only = false;
  std::vector<Tensor<T>> stacks;
  Tensor<T> norms;  // (B); for norms_only engines the total per-example norm
  int64_t batch = 0;
};

// Support matrix. Strategies raise UnsupportedError mentioning
// "unsupported layer" exactly where functionality is missing.
bool strategy_supports(Strategy s, const models::ModelDesc& desc);
void check_strategy_support(Strategy s, const models::ModelDesc& desc);

// Compiled pipeline for one (model, strategy, batch, mode) combination.
// Construction records and optimizes the tapes (the one-time cost reported
// by trace_seconds); compute() is the per-step work.
template <typename T>
class GradEngine {
 public:
  GradEngine(const models::Model<T>& model, Strategy strategy, int64_t batch,
             ExecMode mode);
  ~GradEngine();
  GradEngine(GradEngine&&) noexcept;

  PerExampleGrads<T> compute(const Tensor<T>& x, const Tensor<T>& y,
                             const std::vector<Tensor<T>>& params);

  // Zero-copy stacks for single-consumer pipelines (graph mode,
  // materializing strategies except naive): views alias the engine
  // workspace, follow parameter order, and stay valid until the next call.
  bool supports_views() const;
  std::vector<typename Executor<T>::ValueView> compute_views(
      const Tensor<T>& x, const Tensor<T>& y,
      const std::vector<Tensor<T>>& params);

  // sum_i w_i * grad_i in one weighted backward pass (norms path; also the
  // σ=0 clipped-sum machinery).
  std::vector<Tensor<T>> weighted_grad_sum(const Tensor<T>& x,
                                           const Tensor<T>& y,
                                           const Tensor<T>& w,
                                           const std::vector<Tensor<T>>& params);

  // Gradient of the summed loss (plain batch gradient).
  std::vector<Tensor<T>> batch_grad_sum(const Tensor<T>& x, const Tensor<T>& y,
                                        const std::vector<Tensor<T>>& params);

  Strategy strategy() const;
  ExecMode mode() const;
  int64_t batch() const;
  double trace_seconds() const;
  const OptReport* opt_report() const;  // null in eager mode
  // Deterministic memory model of one compute() call at this width:
  // executor workspaces plus caller-visible output stacks.
  int64_t footprint_bytes() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// One-shot convenience wrappers (optimized graph mode).
template <typename T>
PerExampleGrads<T> naive_loop(const models::Model<T>& m, const Tensor<T>& x,
                              const Tensor<T>& y);
template <typename T>
PerExampleGrads<T> vmap_strategy(const models::Model<T>& m, const Tensor<T>& x,
                                 const Tensor<T>& y);
template <typename T>
PerExampleGrads<T> outer_product_dense(const models::Model<T>& m,
                                       const Tensor<T>& x, const Tensor<T>& y);
template <typename T>
PerExampleGrads<T> per_example_norms_dense(const models::Model<T>& m,
                                           const Tensor<T>& x,
                                           const Tensor<T>& y);
template <typename T>
PerExampleGrads<T> grouped_conv_strategy(const models::Model<T>& m,
                                         const Tensor<T>& x,
                                         const Tensor<T>& y);
template <typename T>
PerExampleGrads<T> jacobian_mm_strategy(const models::Model<T>& m,
                                        const Tensor<T>& x, const Tensor<T>& y);
// vmap over the gradient-of-one-example program (alias of vmap_strategy).
template <typename T>
PerExampleGrads<T> batched_per_example_grads(const models::Model<T>& m,
                                             const Tensor<T>& x,
                                             const Tensor<T>& y);

// Helpers over stacks.
template <typename T>
Tensor<T> per_example_global_norms(const PerExampleGrads<T>& grads);
template <typename T>
std::vector<Tensor<T>> sum_over_examples(const PerExampleGrads<T>& grads);

}  // namespace pegrad
