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

#include "pegrad/tape.hpp"

namespace pegrad {

struct GradOptions {
  // Forward nodes whose cotangents should be exposed as outputs named
  // "cot:<i>" (i = position in this list). Used by the per-example
  // strategies to tap layer cotangents.
  std::vector<int32_t> cotangent_of;
  // When false, grads of parameters are not marked as outputs (callers that
  // only want tapped cotangents let dead-code elimination drop the rest).
  bool mark_param_grads = true;
};

// Reverse-mode gradient as a tape-to-tape transform. The backward program is
// appended to a copy of the source tape so later passes (vmap, DCE, fusion,
// buffer planning) see forward and backward as one graph. Saved forward
// values are simply the forward nodes the VJP rules reference.
//
// Cotangent accumulation order is fixed: nodes in reverse tape order, inputs
// left to right, so reduced-precision runs are reproducible.
//
// Gradients are marked as outputs "grad:<param name>", in parameter order.
// Parameters unreachable from the loss get zero gradients.
Tape grad(const Tape& src, const GradOptions& opts = {});

// Whether a VJP rule is registered for the op kind. grad() raises
// UnsupportedError naming the kind when it encounters an unregistered one.
bool has_vjp_rule(OpKind kind);

}  // namespace pegrad
