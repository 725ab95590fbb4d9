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

#include "pegrad/autodiff.hpp"

#include <optional>

namespace pegrad {

bool has_vjp_rule(OpKind kind) {
  switch (kind) {
    case OpKind::kMaxGrad:
    case OpKind::kSoftmaxXentGrad:
      return false;  // backward helpers; higher-order grads are out of scope
    default:
      return !is_leaf(kind);
  }
}

Tape grad(const Tape& src, const GradOptions& opts) {
  if (src.loss < 0) {
    throw ContractError("grad: tape has no designated loss output");
  }
  if (!src.nodes[src.loss].shape.empty()) {
    throw ContractError("grad: loss must be scalar, got " +
                        shape_str(src.nodes[src.loss].shape));
  }
  TapeBuilder tb(src);
  const int32_t n = static_cast<int32_t>(src.nodes.size());
  std::vector<std::optional<Var>> cot(n);
  cot[src.loss] = tb.constant_scalar(1.0);

  auto accumulate = [&](int32_t id, Var contribution) {
    if (!cot[id]) {
      cot[id] = contribution;
    } else {
      cot[id] = tb.add(*cot[id], contribution);
    }
  };

  for (int32_t v = n - 1; v >= 0; --v) {
    // Copy: pushing VJP nodes reallocates the node vector.
    const Node node = tb.tape().nodes[v];
    if (!cot[v] || is_leaf(node.kind)) continue;
    if (!has_vjp_rule(node.kind)) {
      throw UnsupportedError("no VJP rule for op kind '" +
                             std::string(op_name(node.kind)) + "'");
    }
    Var g = *cot[v];
    Var self{v};
    auto in = [&](int i) { return Var{node.inputs[i]}; };
    const auto& ints = node.attrs.ints;

    switch (node.kind) {
      case OpKind::kAdd:
        accumulate(node.inputs[0], tb.reduce_to_shape(g, tb.shape_of(in(0))));
        accumulate(node.inputs[1], tb.reduce_to_shape(g, tb.shape_of(in(1))));
        break;
      case OpKind::kSub:
        accumulate(node.inputs[0], tb.reduce_to_shape(g, tb.shape_of(in(0))));
        accumulate(node.inputs[1],
                   tb.reduce_to_shape(tb.neg(g), tb.shape_of(in(1))));
        break;
      case OpKind::kMul:
        accumulate(node.inputs[0],
                   tb.reduce_to_shape(tb.mul(g, in(1)), tb.shape_of(in(0))));
        accumulate(node.inputs[1],
                   tb.reduce_to_shape(tb.mul(g, in(0)), tb.shape_of(in(1))));
        break;
      case OpKind::kDiv: {
        Var da = tb.div(g, in(1));
        Var db = tb.neg(tb.div(tb.mul(g, in(0)), tb.square(in(1))));
        accumulate(node.inputs[0], tb.reduce_to_shape(da, tb.shape_of(in(0))));
        accumulate(node.inputs[1], tb.reduce_to_shape(db, tb.shape_of(in(1))));
        break;
      }
      case OpKind::kMaximum: {
        // Ties route to the left operand.
        Var m = tb.ge_mask(in(0), in(1));
        accumulate(node.inputs[0],
                   tb.reduce_to_shape(tb.mul(g, m), tb.shape_of(in(0))));
        Var other = tb.sub(tb.constant_scalar(1.0), m);
        accumulate(node.inputs[1],
                   tb.reduce_to_shape(tb.mul(g, other), tb.shape_of(in(1))));
        break;
      }
      case OpKind::kGtMask:
      case OpKind::kGeMask:
        break;  // zero gradient almost everywhere
      case OpKind::kNeg:
        accumulate(node.inputs[0], tb.neg(g));
        break;
      case OpKind::kExp:
        accumulate(node.inputs[0], tb.mul(g, self));
        break;
      case OpKind::kLog:
        accumulate(node.inputs[0], tb.div(g, in(0)));
        break;
      case OpKind::kTanh: {
        Var one = tb.constant_scalar(1.0);
        accumulate(node.inputs[0], tb.mul(g, tb.sub(one, tb.square(self))));
        break;
      }
      case OpKind::kSigmoid: {
        Var one = tb.constant_scalar(1.0);
        accumulate(node.inputs[0],
                   tb.mul(g, tb.mul(self, tb.sub(one, self))));
        break;
      }
      case OpKind::kRelu:
        accumulate(node.inputs[0],
                   tb.mul(g, tb.gt_mask(in(0), tb.constant_scalar(0.0))));
        break;
      case OpKind::kSquare:
        accumulate(node.inputs[0], tb.mul(g, tb.scale(in(0), 2.0)));
        break;
      case OpKind::kSqrt:
        accumulate(node.inputs[0], tb.div(tb.scale(g, 0.5), self));
        break;
      case OpKind::kBroadcast:
        accumulate(node.inputs[0], tb.reduce_to_shape(g, tb.shape_of(in(0))));
        break;
      case OpKind::kReshape:
        accumulate(node.inputs[0], tb.reshape(g, tb.shape_of(in(0))));
        break;
      case OpKind::kTranspose: {
        std::vector<int64_t> inv(ints.size());
        for (size_t i = 0; i < ints.size(); ++i) inv[ints[i]] = i;
        accumulate(node.inputs[0], tb.transpose(g, inv));
        break;
      }
      case OpKind::kSliceAxis: {
        const Shape sin = tb.shape_of(in(0));
        accumulate(node.inputs[0],
                   tb.pad_axis(g, ints[0], ints[1], sin[ints[0]]));
        break;
      }
      case OpKind::kPadAxis: {
        const Shape sin = tb.shape_of(in(0));
        accumulate(node.inputs[0],
                   tb.slice_axis(g, ints[0], ints[1], sin[ints[0]]));
        break;
      }
      case OpKind::kMatmul:
        // d(AB)/dA = G B^T, d(AB)/dB = A^T G
        accumulate(node.inputs[0], tb.matmul(g, tb.transpose(in(1), {1, 0})));
        accumulate(node.inputs[1], tb.matmul(tb.transpose(in(0), {1, 0}), g));
        break;
      case OpKind::kBmm: {
        const Shape sa = tb.shape_of(in(0));
        const Shape sb = tb.shape_of(in(1));
        Var da = tb.bmm(g, tb.transpose(in(1), {0, 2, 1}));
        if (sa[0] == 1 && node.shape[0] != 1) {
          da = tb.reshape(tb.reduce_sum(da, 0), sa);
        }
        accumulate(node.inputs[0], da);
        Var db = tb.bmm(tb.transpose(in(0), {0, 2, 1}), g);
        if (sb[0] == 1 && node.shape[0] != 1) {
          db = tb.reshape(tb.reduce_sum(db, 0), sb);
        }
        accumulate(node.inputs[1], db);
        break;
      }
      case OpKind::kReduceSum: {
        const Shape sin = tb.shape_of(in(0));
        Shape keep = sin;
        keep[ints[0]] = 1;
        accumulate(node.inputs[0],
                   tb.broadcast_to(tb.reshape(g, keep), sin));
        break;
      }
      case OpKind::kReduceMax:
        accumulate(node.inputs[0], tb.max_grad(in(0), g, ints[0]));
        break;
      case OpKind::kIm2col: {
        const Shape sin = tb.shape_of(in(0));
        accumulate(node.inputs[0], tb.col2im(g, sin[1], sin[2], sin[3],
                                             ints[0], ints[1], ints[2],
                                             ints[3]));
        break;
      }
      case OpKind::kCol2im:
        accumulate(node.inputs[0],
                   tb.im2col(g, ints[0], ints[1], ints[2], ints[3]));
        break;
      case OpKind::kGatherRows: {
        const Shape st = tb.shape_of(in(0));
        accumulate(node.inputs[0], tb.scatter_add(g, in(1), st[0]));
        break;  // ids carry no gradient
      }
      case OpKind::kScatterAdd:
        accumulate(node.inputs[0], tb.gather_rows(g, in(1)));
        break;
      case OpKind::kSoftmaxXent:
        accumulate(node.inputs[0],
                   tb.softmax_xent_grad(in(0), in(1), g, ints[0]));
        break;
      default:
        throw UnsupportedError("no VJP rule for op kind '" +
                               std::string(op_name(node.kind)) + "'");
    }
  }

  if (opts.mark_param_grads) {
    const std::vector<int32_t> params = tb.tape().params;
    const std::vector<std::string> names = tb.tape().param_names;
    for (size_t p = 0; p < params.size(); ++p) {
      const int32_t pid = params[p];
      Var gv;
      if (cot[pid]) {
        gv = *cot[pid];
      } else {
        // Parameter unreachable from the loss: zero gradient.
        gv = tb.broadcast_to(tb.constant_scalar(0.0),
                             tb.shape_of(Var{pid}));
      }
      tb.mark_output(gv, "grad:" + names[p]);
    }
  }
  for (size_t i = 0; i < opts.cotangent_of.size(); ++i) {
    const int32_t id = opts.cotangent_of[i];
    if (id < 0 || id >= n) throw ContractError("cotangent_of: bad node id");
    Var cv = cot[id] ? *cot[id]
                     : tb.broadcast_to(tb.constant_scalar(0.0),
                                       tb.shape_of(Var{id}));
    tb.mark_output(cv, "cot:" + std::to_string(i));
  }
  return tb.finish();
}

}  // namespace pegrad
