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

#include "pegrad/tape.hpp"

namespace pegrad {

struct DceResult {
  Tape tape;
  int64_t removed = 0;
  std::vector<std::string> dead_params;  // declared but unreachable from roots
};

// Removes nodes unreachable from the loss and marked outputs. Parameter and
// input leaves are kept so executor bindings stay positional; unreachable
// parameters are reported instead.
DceResult dce(const Tape& tape);

// Maximal single-consumer chains of elementwise nodes, executed later as one
// loop without materializing interior values. Chains never extend through a
// marked output or the loss.
struct FusionResult {
  std::vector<std::vector<int32_t>> groups;  // chains with >= 2 members
  std::vector<int32_t> group_of;             // node -> group index or -1
  std::vector<char> interior;                // node feeds only its chain
};

FusionResult fuse_elementwise(const Tape& tape);

// Liveness-driven buffer assignment: greedy first-fit over definition order
// with exact-size match preferred, then best fit. Sizes are in elements;
// multiply by the element width for bytes. Reshape nodes alias their source
// and fused interiors get no storage.
struct BufferPlan {
  std::vector<int32_t> node_buffer;   // -1: external, alias, or interior
  std::vector<int32_t> alias_root;    // reshape chains resolve to this node
  std::vector<int64_t> buffer_elems;
  std::vector<int64_t> def_step;      // -1 for non-materializing nodes
  std::vector<int64_t> last_use;      // INT64_MAX for outputs/loss
  int64_t planned_peak_elems = 0;     // sum of buffer sizes (arena extent)
  int64_t no_reuse_elems = 0;         // every value gets its own buffer
};

BufferPlan plan_buffers(const Tape& tape, const FusionResult& fusion);

// Live-range peak of plain node-by-node interpretation with fresh
// allocations freed after last use. The memory model for eager mode.
int64_t eager_peak_elems(const Tape& tape);

struct OptReport {
  int64_t removed_nodes = 0;
  int64_t fusion_groups = 0;
  int64_t fused_nodes = 0;
  int64_t planned_peak_elems = 0;
  int64_t no_reuse_elems = 0;
  std::vector<std::string> dead_params;
};

// dce -> fuse_elementwise -> plan_buffers.
struct Graph {
  Tape tape;
  FusionResult fusion;
  BufferPlan plan;
  OptReport report;
};

std::shared_ptr<const Graph> optimize(const Tape& tape);

}  // namespace pegrad
