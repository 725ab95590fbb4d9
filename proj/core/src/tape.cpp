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

#include "pegrad/tape.hpp"

#include <algorithm>

#include "pegrad/detail/kernels.hpp"

namespace pegrad {

Var TapeBuilder::push(Node n) {
  for (int32_t in : n.inputs) {
    if (in < 0 || in >= static_cast<int32_t>(tape_.nodes.size())) {
      throw TraceError("op " + std::string(op_name(n.kind)) +
                       " references an undefined value");
    }
  }
  tape_.nodes.push_back(std::move(n));
  return Var{static_cast<int32_t>(tape_.nodes.size()) - 1};
}

Var TapeBuilder::input(Shape shape, std::string name) {
  Var v = push({OpKind::kInput, {}, std::move(shape), {}});
  tape_.inputs.push_back(v.id);
  tape_.input_names.push_back(std::move(name));
  return v;
}

Var TapeBuilder::param(Shape shape, std::string name) {
  Var v = push({OpKind::kParam, {}, std::move(shape), {}});
  tape_.params.push_back(v.id);
  tape_.param_names.push_back(std::move(name));
  return v;
}

Var TapeBuilder::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("constant: payload does not match " + shape_str(shape));
  }
  Node n{OpKind::kConst, {}, std::move(shape), {}};
  n.attrs.values = std::move(values);
  return push(std::move(n));
}

Var TapeBuilder::ew(OpKind kind, Var a, Var b) {
  if (!is_ew_binary(kind)) throw TraceError("ew: not a binary op");
  Shape out =
      detail::broadcast_shape(shape_of(a), shape_of(b));
  return push({kind, {a.id, b.id}, std::move(out), {}});
}

Var TapeBuilder::unary(OpKind kind, Var a) {
  if (!is_ew_unary(kind) || kind == OpKind::kBroadcast) {
    throw TraceError("unary: not a unary op");
  }
  return push({kind, {a.id}, shape_of(a), {}});
}

Var TapeBuilder::broadcast_to(Var a, Shape target) {
  // Validates that the source broadcasts to the target.
  detail::broadcast_strides(shape_of(a), target);
  if (shape_of(a) == target) return a;
  return push({OpKind::kBroadcast, {a.id}, std::move(target), {}});
}

Var TapeBuilder::reshape(Var a, Shape target) {
  if (numel(target) != numel(shape_of(a))) {
    throw ShapeError("reshape " + shape_str(shape_of(a)) + " -> " +
                     shape_str(target) + ": element count mismatch");
  }
  if (shape_of(a) == target) return a;
  return push({OpKind::kReshape, {a.id}, std::move(target), {}});
}

Var TapeBuilder::transpose(Var a, std::vector<int64_t> perm) {
  const Shape& s = shape_of(a);
  if (perm.size() != s.size()) throw ShapeError("transpose perm mismatch");
  Shape out(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) out[i] = s[perm[i]];
  Node n{OpKind::kTranspose, {a.id}, std::move(out), {}};
  n.attrs.ints = std::move(perm);
  return push(std::move(n));
}

Var TapeBuilder::slice_axis(Var a, int64_t axis, int64_t start, int64_t len) {
  const Shape& s = shape_of(a);
  if (axis < 0 || axis >= static_cast<int64_t>(s.size()) || start < 0 ||
      start + len > s[axis]) {
    throw ShapeError("slice_axis: bad range for " + shape_str(s));
  }
  Shape out = s;
  out[axis] = len;
  Node n{OpKind::kSliceAxis, {a.id}, std::move(out), {}};
  n.attrs.ints = {axis, start, len};
  return push(std::move(n));
}

Var TapeBuilder::pad_axis(Var a, int64_t axis, int64_t before, int64_t total) {
  const Shape& s = shape_of(a);
  if (axis < 0 || axis >= static_cast<int64_t>(s.size()) || before < 0 ||
      before + s[axis] > total) {
    throw ShapeError("pad_axis: bad range for " + shape_str(s));
  }
  Shape out = s;
  out[axis] = total;
  Node n{OpKind::kPadAxis, {a.id}, std::move(out), {}};
  n.attrs.ints = {axis, before, total};
  return push(std::move(n));
}

Var TapeBuilder::matmul(Var a, Var b) {
  const Shape& sa = shape_of(a);
  const Shape& sb = shape_of(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: " + shape_str(sa) + " x " + shape_str(sb));
  }
  return push({OpKind::kMatmul, {a.id, b.id}, {sa[0], sb[1]}, {}});
}

Var TapeBuilder::bmm(Var a, Var b) {
  const Shape& sa = shape_of(a);
  const Shape& sb = shape_of(b);
  if (sa.size() != 3 || sb.size() != 3 || sa[2] != sb[1] ||
      (sa[0] != sb[0] && sa[0] != 1 && sb[0] != 1)) {
    throw ShapeError("bmm: " + shape_str(sa) + " x " + shape_str(sb));
  }
  return push(
      {OpKind::kBmm, {a.id, b.id}, {std::max(sa[0], sb[0]), sa[1], sb[2]}, {}});
}

Var TapeBuilder::clone_node(const Node& n, const std::vector<Var>& inputs) {
  Node copy = n;
  copy.inputs.clear();
  for (Var v : inputs) copy.inputs.push_back(v.id);
  return push(std::move(copy));
}

namespace {
Shape drop_axis(const Shape& s, int64_t axis) {
  Shape out;
  for (size_t i = 0; i < s.size(); ++i)
    if (static_cast<int64_t>(i) != axis) out.push_back(s[i]);
  return out;
}
}  // namespace

Var TapeBuilder::reduce_sum(Var a, int64_t axis) {
  const Shape& s = shape_of(a);
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw ShapeError("reduce_sum: invalid axis");
  }
  Node n{OpKind::kReduceSum, {a.id}, drop_axis(s, axis), {}};
  n.attrs.ints = {axis};
  return push(std::move(n));
}

Var TapeBuilder::reduce_max(Var a, int64_t axis) {
  const Shape& s = shape_of(a);
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw ShapeError("reduce_max: invalid axis");
  }
  Node n{OpKind::kReduceMax, {a.id}, drop_axis(s, axis), {}};
  n.attrs.ints = {axis};
  return push(std::move(n));
}

Var TapeBuilder::max_grad(Var x, Var g, int64_t axis) {
  const Shape& sx = shape_of(x);
  Node n{OpKind::kMaxGrad, {x.id, g.id}, sx, {}};
  n.attrs.ints = {axis};
  return push(std::move(n));
}

Var TapeBuilder::reduce_sum_all(Var a) {
  Var cur = a;
  while (!shape_of(cur).empty()) {
    cur = reduce_sum(cur, static_cast<int64_t>(shape_of(cur).size()) - 1);
  }
  return cur;
}

Var TapeBuilder::im2col(Var x, int64_t kh, int64_t kw, int64_t stride,
                        int64_t pad) {
  const Shape& s = shape_of(x);
  if (s.size() != 4) throw ShapeError("im2col expects (N,C,H,W)");
  const int64_t Ho = detail::conv_out_extent(s[2], kh, stride, pad);
  const int64_t Wo = detail::conv_out_extent(s[3], kw, stride, pad);
  Node n{OpKind::kIm2col, {x.id}, {s[0], s[1] * kh * kw, Ho * Wo}, {}};
  n.attrs.ints = {kh, kw, stride, pad};
  return push(std::move(n));
}

Var TapeBuilder::col2im(Var cols, int64_t C, int64_t H, int64_t W, int64_t kh,
                        int64_t kw, int64_t stride, int64_t pad) {
  const Shape& s = shape_of(cols);
  if (s.size() != 3) throw ShapeError("col2im expects (N,CKK,P)");
  Node n{OpKind::kCol2im, {cols.id}, {s[0], C, H, W}, {}};
  n.attrs.ints = {kh, kw, stride, pad, C, H, W};
  return push(std::move(n));
}

Var TapeBuilder::gather_rows(Var table, Var ids) {
  const Shape& st = shape_of(table);
  if (st.size() != 2) throw ShapeError("gather_rows expects table (V,E)");
  Shape out = shape_of(ids);
  out.push_back(st[1]);
  return push({OpKind::kGatherRows, {table.id, ids.id}, std::move(out), {}});
}

Var TapeBuilder::scatter_add(Var grads, Var ids, int64_t V) {
  const Shape& sg = shape_of(grads);
  if (sg.empty()) throw ShapeError("scatter_add expects (...,E)");
  const int64_t E = sg.back();
  if (numel(sg) != numel(shape_of(ids)) * E) {
    throw ShapeError("scatter_add: grads/ids mismatch");
  }
  Node n{OpKind::kScatterAdd, {grads.id, ids.id}, {V, E}, {}};
  n.attrs.ints = {V};
  return push(std::move(n));
}

Var TapeBuilder::softmax_xent(Var logits, Var labels, int64_t classes) {
  const Shape& sl = shape_of(logits);
  const Shape& sy = shape_of(labels);
  if (sl.size() != 2 || sy.size() != 1 || sl[0] != sy[0] || sl[1] != classes) {
    throw ShapeError("softmax_xent: logits " + shape_str(sl) + " labels " +
                     shape_str(sy));
  }
  Node n{OpKind::kSoftmaxXent, {logits.id, labels.id}, {sl[0]}, {}};
  n.attrs.ints = {classes};
  return push(std::move(n));
}

Var TapeBuilder::softmax_xent_grad(Var logits, Var labels, Var g,
                                   int64_t classes) {
  Node n{OpKind::kSoftmaxXentGrad, {logits.id, labels.id, g.id},
         shape_of(logits), {}};
  n.attrs.ints = {classes};
  return push(std::move(n));
}

Var TapeBuilder::conv2d(Var x, Var w, int64_t stride, int64_t pad) {
  const Shape sx = shape_of(x);  // copies: pushes below reallocate nodes
  const Shape sw = shape_of(w);
  if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) {
    throw ShapeError("conv2d: x " + shape_str(sx) + " w " + shape_str(sw));
  }
  const int64_t D = sw[0], kh = sw[2], kw = sw[3];
  const int64_t Ho = detail::conv_out_extent(sx[2], kh, stride, pad);
  const int64_t Wo = detail::conv_out_extent(sx[3], kw, stride, pad);
  Var cols = im2col(x, kh, kw, stride, pad);
  Var wf = reshape(w, {1, D, sw[1] * kh * kw});
  Var out = bmm(wf, cols);
  return reshape(out, {sx[0], D, Ho, Wo});
}

Var TapeBuilder::pool2d(PoolOp kind, Var x, int64_t k, int64_t stride) {
  const Shape s = shape_of(x);  // copy: pushes below reallocate nodes
  if (s.size() != 4) throw ShapeError("pool2d expects (N,C,H,W)");
  const int64_t Ho = detail::conv_out_extent(s[2], k, stride, 0);
  const int64_t Wo = detail::conv_out_extent(s[3], k, stride, 0);
  Var cols = im2col(reshape(x, {s[0] * s[1], 1, s[2], s[3]}), k, k, stride, 0);
  Var red;
  if (kind == PoolOp::max) {
    red = reduce_max(cols, 1);
  } else {
    red = scale(reduce_sum(cols, 1), 1.0 / static_cast<double>(k * k));
  }
  return reshape(red, {s[0], s[1], Ho, Wo});
}

Var TapeBuilder::scale(Var a, double factor) {
  return mul(a, constant_scalar(factor));
}

Var TapeBuilder::reduce_to_shape(Var g, Shape target) {
  Shape cur = shape_of(g);
  // Leading axes absent from the target sum away first.
  while (cur.size() > target.size()) {
    g = reduce_sum(g, 0);
    cur = shape_of(g);
  }
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 1 && cur[i] != 1) {
      g = reduce_sum(g, static_cast<int64_t>(i));
      // Re-insert the kept axis.
      Shape withone = shape_of(g);
      withone.insert(withone.begin() + i, 1);
      g = reshape(g, withone);
      cur = shape_of(g);
    }
  }
  if (cur != target) {
    throw ShapeError("reduce_to_shape: " + shape_str(shape_of(g)) + " vs " +
                     shape_str(target));
  }
  return g;
}

void TapeBuilder::mark_loss(Var v) {
  if (!shape_of(v).empty()) {
    throw ContractError("loss must be a scalar, got " +
                        shape_str(shape_of(v)));
  }
  tape_.loss = v.id;
}

void TapeBuilder::mark_output(Var v, std::string name) {
  tape_.outputs.emplace_back(v.id, std::move(name));
}

Tape record(const std::function<void(TapeBuilder&)>& program) {
  TapeBuilder tb;
  program(tb);
  return tb.finish();
}

}  // namespace pegrad
