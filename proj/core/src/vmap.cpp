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

#include "pegrad/vmap.hpp"

#include <algorithm>

namespace pegrad {

namespace {

struct Lifted {
  Var var;
  bool batched = false;
};

struct VmapCtx {
  TapeBuilder tb;
  int64_t B;

  Shape with_batch(const Shape& s) const {
    Shape out;
    out.reserve(s.size() + 1);
    out.push_back(B);
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  // Per-example shape of a lifted value.
  Shape unbatched_shape(const Lifted& v) const {
    Shape s = tb.shape_of(v.var);
    if (v.batched) s.erase(s.begin());
    return s;
  }

  // Force a value to carry the batch axis, materializing a broadcast when it
  // was shared.
  Var materialize(const Lifted& v) {
    if (v.batched) return v.var;
    Shape s = tb.shape_of(v.var);
    Shape ones(s.size() + 1, 1);
    for (size_t i = 0; i < s.size(); ++i) ones[i + 1] = s[i];
    Var r = tb.reshape(v.var, ones);
    Shape target = ones;
    target[0] = B;
    return tb.broadcast_to(r, target);
  }

  // Fold the leading batch axis into the next axis: (B, n, ...) -> (B*n, ...).
  Var fold2(Var v) {
    Shape s = tb.shape_of(v);
    Shape out(s.begin() + 1, s.end());
    out[0] *= s[0];
    return tb.reshape(v, out);
  }

  Var unfold2(Var v, int64_t n) {
    Shape s = tb.shape_of(v);
    Shape out;
    out.push_back(B);
    out.push_back(n);
    out.insert(out.end(), s.begin() + 1, s.end());
    return tb.reshape(v, out);
  }
};

}  // namespace

Tape vmap(const Tape& src, int64_t batch, const std::vector<InAxis>& in_axes) {
  if (batch <= 0) throw ContractError("vmap: batch extent must be positive");
  VmapCtx ctx{TapeBuilder{}, batch};
  TapeBuilder& tb = ctx.tb;

  std::vector<Lifted> lift(src.nodes.size());
  size_t input_ordinal = 0;

  for (size_t vid = 0; vid < src.nodes.size(); ++vid) {
    const Node& node = src.nodes[vid];
    auto arg = [&](int i) -> const Lifted& { return lift[node.inputs[i]]; };
    Lifted out;

    switch (node.kind) {
      case OpKind::kInput: {
        const size_t ord = input_ordinal++;
        const InAxis ax = ord < in_axes.size() ? in_axes[ord] : InAxis::lead;
        if (ax == InAxis::lead) {
          out = {tb.input(ctx.with_batch(node.shape),
                          src.input_names[ord]),
                 true};
        } else {
          out = {tb.input(node.shape, src.input_names[ord]), false};
        }
        break;
      }
      case OpKind::kParam: {
        const size_t ord = std::find(src.params.begin(), src.params.end(),
                                     static_cast<int32_t>(vid)) -
                           src.params.begin();
        out = {tb.param(node.shape, src.param_names[ord]), false};
        break;
      }
      case OpKind::kConst:
        out = {tb.constant(node.shape, node.attrs.values), false};
        break;

      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul:
      case OpKind::kDiv:
      case OpKind::kMaximum:
      case OpKind::kGtMask:
      case OpKind::kGeMask: {
        const Lifted &a = arg(0), &b = arg(1);
        if (!a.batched && !b.batched) {
          out = {tb.ew(node.kind, a.var, b.var), false};
          break;
        }
        const size_t orank = node.shape.size();
        auto align = [&](const Lifted& v) -> Var {
          if (!v.batched) return v.var;  // trailing alignment handles it
          Shape per = ctx.unbatched_shape(v);
          if (per.size() == orank) return v.var;
          Shape padded(orank + 1, 1);
          padded[0] = ctx.B;
          for (size_t i = 0; i < per.size(); ++i) {
            padded[orank + 1 - per.size() + i] = per[i];
          }
          return tb.reshape(v.var, padded);
        };
        out = {tb.ew(node.kind, align(a), align(b)), true};
        break;
      }

      case OpKind::kNeg:
      case OpKind::kExp:
      case OpKind::kLog:
      case OpKind::kTanh:
      case OpKind::kSigmoid:
      case OpKind::kRelu:
      case OpKind::kSquare:
      case OpKind::kSqrt:
        out = {tb.unary(node.kind, arg(0).var), arg(0).batched};
        break;

      case OpKind::kBroadcast: {
        const Lifted& a = arg(0);
        if (!a.batched) {
          out = {tb.broadcast_to(a.var, node.shape), false};
          break;
        }
        Shape per = ctx.unbatched_shape(a);
        Shape padded(node.shape.size() + 1, 1);
        padded[0] = ctx.B;
        for (size_t i = 0; i < per.size(); ++i) {
          padded[node.shape.size() + 1 - per.size() + i] = per[i];
        }
        Var r = tb.reshape(a.var, padded);
        out = {tb.broadcast_to(r, ctx.with_batch(node.shape)), true};
        break;
      }

      case OpKind::kReshape:
        if (!arg(0).batched) {
          out = {tb.reshape(arg(0).var, node.shape), false};
        } else {
          out = {tb.reshape(arg(0).var, ctx.with_batch(node.shape)), true};
        }
        break;

      case OpKind::kTranspose: {
        if (!arg(0).batched) {
          std::vector<int64_t> perm = node.attrs.ints;
          out = {tb.transpose(arg(0).var, perm), false};
          break;
        }
        std::vector<int64_t> perm{0};
        for (int64_t p : node.attrs.ints) perm.push_back(p + 1);
        out = {tb.transpose(arg(0).var, perm), true};
        break;
      }

      case OpKind::kSliceAxis: {
        const auto& a = node.attrs.ints;
        const int64_t shift = arg(0).batched ? 1 : 0;
        out = {tb.slice_axis(arg(0).var, a[0] + shift, a[1], a[2]),
               arg(0).batched};
        break;
      }
      case OpKind::kPadAxis: {
        const auto& a = node.attrs.ints;
        const int64_t shift = arg(0).batched ? 1 : 0;
        out = {tb.pad_axis(arg(0).var, a[0] + shift, a[1], a[2]),
               arg(0).batched};
        break;
      }

      case OpKind::kMatmul: {
        const Lifted &a = arg(0), &b = arg(1);
        if (!a.batched && !b.batched) {
          out = {tb.matmul(a.var, b.var), false};
        } else if (a.batched && !b.batched) {
          // (B,m,k)x(k,n): fold rows, one matmul, unfold.
          Shape sa = tb.shape_of(a.var);
          Var flat = tb.reshape(a.var, {sa[0] * sa[1], sa[2]});
          Var mm = tb.matmul(flat, b.var);
          out = {tb.reshape(mm, {sa[0], sa[1], tb.shape_of(b.var)[1]}), true};
        } else if (!a.batched && b.batched) {
          Shape sa = tb.shape_of(a.var);
          out = {tb.bmm(tb.reshape(a.var, {1, sa[0], sa[1]}), b.var), true};
        } else {
          out = {tb.bmm(a.var, b.var), true};
        }
        break;
      }

      case OpKind::kBmm: {
        const Lifted &a = arg(0), &b = arg(1);
        if (!a.batched && !b.batched) {
          out = {tb.bmm(a.var, b.var), false};
          break;
        }
        const Shape pa = ctx.unbatched_shape(a);  // (na,m,k)
        const Shape pb = ctx.unbatched_shape(b);  // (nb,k,n)
        const int64_t nout = std::max(pa[0], pb[0]);
        auto fold_side = [&](const Lifted& v, const Shape& per) -> Var {
          // -> (B*per[0], x, y), tiling broadcast batch extents as needed.
          Var m = ctx.materialize(v);
          if (per[0] == 1 && nout != 1) {
            // keep extent 1; the folded bmm broadcast no longer lines up per
            // example, so tile across the per-example batch first.
            Var wide = tb.broadcast_to(
                m, {ctx.B, nout, per[1], per[2]});
            return ctx.fold2(wide);
          }
          return ctx.fold2(m);
        };
        if (pa[0] == pb[0] || nout == 1) {
          out = {ctx.unfold2(tb.bmm(ctx.fold2(ctx.materialize(a)),
                                    ctx.fold2(ctx.materialize(b))),
                             nout),
                 true};
        } else {
          out = {ctx.unfold2(tb.bmm(fold_side(a, pa), fold_side(b, pb)), nout),
                 true};
        }
        break;
      }

      case OpKind::kReduceSum:
      case OpKind::kReduceMax: {
        const int64_t axis = node.attrs.ints[0] + (arg(0).batched ? 1 : 0);
        out = {node.kind == OpKind::kReduceSum
                   ? tb.reduce_sum(arg(0).var, axis)
                   : tb.reduce_max(arg(0).var, axis),
               arg(0).batched};
        break;
      }

      case OpKind::kMaxGrad: {
        if (!arg(0).batched && !arg(1).batched) {
          out = {tb.max_grad(arg(0).var, arg(1).var, node.attrs.ints[0]),
                 false};
          break;
        }
        Var x = ctx.materialize(arg(0));
        Var g = ctx.materialize(arg(1));
        out = {tb.max_grad(x, g, node.attrs.ints[0] + 1), true};
        break;
      }

      case OpKind::kIm2col: {
        const auto& a = node.attrs.ints;
        if (!arg(0).batched) {
          out = {tb.im2col(arg(0).var, a[0], a[1], a[2], a[3]), false};
          break;
        }
        Shape per = ctx.unbatched_shape(arg(0));  // (N,C,H,W)
        Var folded = ctx.fold2(arg(0).var);
        Var cols = tb.im2col(folded, a[0], a[1], a[2], a[3]);
        out = {ctx.unfold2(cols, per[0]), true};
        break;
      }
      case OpKind::kCol2im: {
        const auto& a = node.attrs.ints;
        if (!arg(0).batched) {
          out = {tb.col2im(arg(0).var, a[4], a[5], a[6], a[0], a[1], a[2],
                           a[3]),
                 false};
          break;
        }
        Shape per = ctx.unbatched_shape(arg(0));  // (N,CKK,P)
        Var folded = ctx.fold2(arg(0).var);
        Var x = tb.col2im(folded, a[4], a[5], a[6], a[0], a[1], a[2], a[3]);
        out = {ctx.unfold2(x, per[0]), true};
        break;
      }

      case OpKind::kGatherRows: {
        if (arg(0).batched) {
          throw UnsupportedError(
              "vmap: no batching rule for a batched embedding table");
        }
        out = {tb.gather_rows(arg(0).var, arg(1).var), arg(1).batched};
        break;
      }

      case OpKind::kScatterAdd: {
        const int64_t V = node.attrs.ints[0];
        if (!arg(0).batched && !arg(1).batched) {
          out = {tb.scatter_add(arg(0).var, arg(1).var, V), false};
          break;
        }
        Var g = ctx.materialize(arg(0));
        Var ids = ctx.materialize(arg(1));
        // Offset ids by example * V and scatter into one (B*V, E) table.
        const Shape ids_shape = tb.shape_of(ids);
        Shape off_shape(ids_shape.size(), 1);
        off_shape[0] = ctx.B;
        std::vector<double> offsets(ctx.B);
        for (int64_t i = 0; i < ctx.B; ++i)
          offsets[i] = static_cast<double>(i * V);
        Var shifted = tb.add(ids, tb.constant(off_shape, offsets));
        const Shape gs = tb.shape_of(g);
        const int64_t E = gs.back();
        Var gflat = tb.reshape(g, {numel(gs) / E, E});
        Var iflat = tb.reshape(shifted, {numel(ids_shape)});
        Var table = tb.scatter_add(gflat, iflat, ctx.B * V);
        out = {tb.reshape(table, {ctx.B, V, E}), true};
        break;
      }

      case OpKind::kSoftmaxXent: {
        if (!arg(0).batched && !arg(1).batched) {
          out = {tb.softmax_xent(arg(0).var, arg(1).var, node.attrs.ints[0]),
                 false};
          break;
        }
        const int64_t classes = node.attrs.ints[0];
        Var logits = ctx.fold2(ctx.materialize(arg(0)));
        Var labels = ctx.fold2(ctx.materialize(arg(1)));
        const int64_t N = ctx.unbatched_shape(arg(0))[0];
        Var losses = tb.softmax_xent(logits, labels, classes);
        out = {ctx.unfold2(losses, N), true};
        break;
      }

      case OpKind::kSoftmaxXentGrad: {
        if (!arg(0).batched && !arg(1).batched && !arg(2).batched) {
          out = {tb.softmax_xent_grad(arg(0).var, arg(1).var, arg(2).var,
                                      node.attrs.ints[0]),
                 false};
          break;
        }
        const int64_t classes = node.attrs.ints[0];
        const int64_t N = ctx.unbatched_shape(arg(0))[0];
        Var logits = ctx.fold2(ctx.materialize(arg(0)));
        Var labels = ctx.fold2(ctx.materialize(arg(1)));
        Var g = ctx.fold2(ctx.materialize(arg(2)));
        Var dz = tb.softmax_xent_grad(logits, labels, g, classes);
        out = {ctx.unfold2(dz, N), true};
        break;
      }
    }

    lift[vid] = out;
  }

  for (const auto& [id, name] : src.outputs) {
    tb.mark_output(ctx.materialize(lift[id]), name);
  }
  return tb.finish();
}

}  // namespace pegrad
