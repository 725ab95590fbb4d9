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

#include <string_view>

namespace pegrad {

// Primitive operation set. Every higher-level construct (models, losses,
// per-example strategies, optimizer passes) is expressed in these ops.
enum class OpKind : uint8_t {
  // leaves
  kInput,
  kParam,
  kConst,
  // elementwise binary (fusable)
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMaximum,
  kGtMask,  // 1 where a > b else 0
  kGeMask,  // 1 where a >= b else 0
  // elementwise unary (fusable)
  kNeg,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kRelu,
  kSquare,
  kSqrt,
  kBroadcast,  // materialize trailing-aligned broadcast to node shape
  // metadata alias
  kReshape,
  // data movement
  kTranspose,  // attrs.ints = permutation
  kSliceAxis,  // attrs.ints = {axis, start, len}
  kPadAxis,    // attrs.ints = {axis, before, total}
  // contraction
  kMatmul,  // (m,k) x (k,n)
  kBmm,     // (a,m,k) x (b,k,n), a in {1,b} broadcasts
  // reductions over one axis
  kReduceSum,  // attrs.ints = {axis}
  kReduceMax,  // attrs.ints = {axis}
  kMaxGrad,    // inputs (x, g); routes g to the first max along axis
  // convolution patches
  kIm2col,  // attrs.ints = {kh, kw, stride, pad}
  kCol2im,  // attrs.ints = {kh, kw, stride, pad, C, H, W}
  // embedding
  kGatherRows,
  kScatterAdd,  // attrs.ints = {V}
  // classification loss (log-sum-exp stabilized); attrs.ints = {classes},
  // classes == 1 selects the sigmoid/binary head
  kSoftmaxXent,
  kSoftmaxXentGrad,
};

constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kConst: return "const";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kMaximum: return "maximum";
    case OpKind::kGtMask: return "gt_mask";
    case OpKind::kGeMask: return "ge_mask";
    case OpKind::kNeg: return "neg";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSliceAxis: return "slice_axis";
    case OpKind::kPadAxis: return "pad_axis";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kBmm: return "bmm";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kReduceMax: return "reduce_max";
    case OpKind::kMaxGrad: return "max_grad";
    case OpKind::kIm2col: return "im2col";
    case OpKind::kCol2im: return "col2im";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kScatterAdd: return "scatter_add";
    case OpKind::kSoftmaxXent: return "softmax_xent";
    case OpKind::kSoftmaxXentGrad: return "softmax_xent_grad";
  }
  return "?";
}

constexpr bool is_ew_binary(OpKind k) {
  return k >= OpKind::kAdd && k <= OpKind::kGeMask;
}

constexpr bool is_ew_unary(OpKind k) {
  return k >= OpKind::kNeg && k <= OpKind::kBroadcast;
}

constexpr bool is_elementwise(OpKind k) {
  return is_ew_binary(k) || is_ew_unary(k);
}

constexpr bool is_leaf(OpKind k) {
  return k == OpKind::kInput || k == OpKind::kParam || k == OpKind::kConst;
}

}  // namespace pegrad
