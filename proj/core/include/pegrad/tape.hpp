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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pegrad/common.hpp"
#include "pegrad/ops.hpp"

namespace pegrad {

// Kind-specific integer attributes plus constant payloads. Constants are
// stored as doubles and materialized at the executor's element width.
struct Attrs {
  std::vector<int64_t> ints;
  std::vector<double> values;
};

struct Node {
  OpKind kind = OpKind::kConst;
  std::vector<int32_t> inputs;
  Shape shape;
  Attrs attrs;
};

// A recorded program: a DAG of primitive ops in topological order (inputs
// always precede their consumers, by construction). Shapes are concrete.
// Immutable and shareable once recording finishes.
struct Tape {
  std::vector<Node> nodes;
  std::vector<int32_t> params;   // parameter leaves, in declaration order
  std::vector<int32_t> inputs;   // input leaves, in declaration order
  std::vector<std::string> param_names;
  std::vector<std::string> input_names;
  int32_t loss = -1;             // scalar loss node, -1 if not designated
  std::vector<std::pair<int32_t, std::string>> outputs;

  const Node& node(int32_t id) const { return nodes[id]; }
  int64_t node_count() const { return static_cast<int64_t>(nodes.size()); }

  int32_t output_id(const std::string& name) const {
    for (auto& [id, n] : outputs)
      if (n == name) return id;
    throw ContractError("tape has no output named '" + name + "'");
  }
};

// Handle to a node during tracing.
struct Var {
  int32_t id = -1;
};

// Records primitive ops into a Tape, inferring shapes as it goes. Model
// programs are written against this builder; replaying the finished tape
// through an executor reproduces eager evaluation bit for bit at equal
// element width.
class TapeBuilder {
 public:
  enum class PoolOp { avg, max };

  TapeBuilder() = default;
  explicit TapeBuilder(Tape base) : tape_(std::move(base)) {}

  Var input(Shape shape, std::string name);
  Var param(Shape shape, std::string name);
  Var constant(Shape shape, std::vector<double> values);
  Var constant_scalar(double v) { return constant({}, {v}); }

  Var ew(OpKind kind, Var a, Var b);
  Var add(Var a, Var b) { return ew(OpKind::kAdd, a, b); }
  Var sub(Var a, Var b) { return ew(OpKind::kSub, a, b); }
  Var mul(Var a, Var b) { return ew(OpKind::kMul, a, b); }
  Var div(Var a, Var b) { return ew(OpKind::kDiv, a, b); }
  Var maximum(Var a, Var b) { return ew(OpKind::kMaximum, a, b); }
  Var gt_mask(Var a, Var b) { return ew(OpKind::kGtMask, a, b); }
  Var ge_mask(Var a, Var b) { return ew(OpKind::kGeMask, a, b); }

  Var unary(OpKind kind, Var a);
  Var neg(Var a) { return unary(OpKind::kNeg, a); }
  Var exp(Var a) { return unary(OpKind::kExp, a); }
  Var log(Var a) { return unary(OpKind::kLog, a); }
  Var tanh(Var a) { return unary(OpKind::kTanh, a); }
  Var sigmoid(Var a) { return unary(OpKind::kSigmoid, a); }
  Var relu(Var a) { return unary(OpKind::kRelu, a); }
  Var square(Var a) { return unary(OpKind::kSquare, a); }
  Var sqrt(Var a) { return unary(OpKind::kSqrt, a); }

  Var broadcast_to(Var a, Shape target);
  Var reshape(Var a, Shape target);
  Var transpose(Var a, std::vector<int64_t> perm);
  Var slice_axis(Var a, int64_t axis, int64_t start, int64_t len);
  Var pad_axis(Var a, int64_t axis, int64_t before, int64_t total);
  Var matmul(Var a, Var b);
  Var bmm(Var a, Var b);
  Var reduce_sum(Var a, int64_t axis);
  Var reduce_max(Var a, int64_t axis);
  Var max_grad(Var x, Var g, int64_t axis);
  Var reduce_sum_all(Var a);  // chain of reduce_sum down to a scalar
  Var im2col(Var x, int64_t kh, int64_t kw, int64_t stride, int64_t pad);
  Var col2im(Var cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
             int64_t stride, int64_t pad);
  Var gather_rows(Var table, Var ids);
  Var scatter_add(Var grads, Var ids, int64_t V);
  Var softmax_xent(Var logits, Var labels, int64_t classes);
  Var softmax_xent_grad(Var logits, Var labels, Var g, int64_t classes);

  // Composites.
  Var conv2d(Var x, Var w, int64_t stride, int64_t pad);
  Var pool2d(PoolOp kind, Var x, int64_t k, int64_t stride);
  Var scale(Var a, double factor);
  // Sum-reduce g so it matches `target` under broadcasting, preserving rank.
  // By-value target: callers often pass shape_of() references that pushes
  // would invalidate.
  Var reduce_to_shape(Var g, Shape target);

  // Transform support: re-emit an existing node with remapped inputs,
  // preserving kind, shape and attributes.
  Var clone_node(const Node& n, const std::vector<Var>& inputs);

  void mark_loss(Var v);
  void mark_output(Var v, std::string name);

  const Shape& shape_of(Var v) const { return tape_.nodes[v.id].shape; }
  Tape finish() { return std::move(tape_); }
  const Tape& tape() const { return tape_; }

 private:
  Var push(Node n);
  Tape tape_;
};

// Traces `program` into a tape. The program may only call TapeBuilder
// primitives; shapes are fixed at trace time.
Tape record(const std::function<void(TapeBuilder&)>& program);

}  // namespace pegrad
