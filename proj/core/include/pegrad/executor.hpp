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

#include "pegrad/graph_opt.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad {

enum class ExecMode { eager, graph };

inline const char* exec_mode_name(ExecMode m) {
  return m == ExecMode::eager ? "eager" : "graph";
}

// Runs a recorded program. Eager mode interprets the raw tape node by node
// with fresh allocations; graph mode runs the optimized form: fused
// elementwise chains as single loops and all temporaries placed in one
// arena laid out by the buffer plan. Both modes call the same kernels, so
// they produce bitwise identical values at equal element width.
//
// An executor owns its workspace and is single-owner; run several executors
// on the same (immutable) tape or graph for concurrency.
template <typename T>
class Executor {
 public:
  explicit Executor(std::shared_ptr<const Tape> tape);    // eager
  explicit Executor(std::shared_ptr<const Graph> graph);  // graph
  ~Executor();
  Executor(Executor&&) noexcept;
  Executor& operator=(Executor&&) noexcept;
  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  // Outputs in tape().outputs order. Shapes of params/inputs are validated
  // against the leaves and mismatches name the offending leaf.
  std::vector<Tensor<T>> run(const std::vector<Tensor<T>>& params,
                             const std::vector<Tensor<T>>& inputs);

  // Zero-copy variant for single-consumer pipelines: views point into the
  // executor workspace and stay valid only until the next run on this
  // executor. Graph mode only.
  struct ValueView {
    const T* data = nullptr;
    Shape shape;
  };
  std::vector<ValueView> run_views(const std::vector<Tensor<T>>& params,
                                   const std::vector<Tensor<T>>& inputs);

  ExecMode mode() const;
  const Tape& tape() const;
  const Graph* graph() const;  // null in eager mode

  // Graph mode: bytes held by the planned arena (allocated once).
  int64_t arena_bytes() const;
  // Static memory model of a run at this element width: planned arena in
  // graph mode, live-range peak of fresh allocations in eager mode.
  int64_t workspace_peak_bytes() const;

 private:
  void exec_graph(const std::vector<Tensor<T>>& params,
                  const std::vector<Tensor<T>>& inputs);

  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pegrad
