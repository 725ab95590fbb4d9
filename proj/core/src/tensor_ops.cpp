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

#include "pegrad/tensor_ops.hpp"

#include <algorithm>
#include <cmath>

#include "pegrad/detail/kernels.hpp"

namespace pegrad {

namespace {

OpKind to_op(EwBinaryKind k) {
  switch (k) {
    case EwBinaryKind::add: return OpKind::kAdd;
    case EwBinaryKind::sub: return OpKind::kSub;
    case EwBinaryKind::mul: return OpKind::kMul;
    case EwBinaryKind::div: return OpKind::kDiv;
    case EwBinaryKind::max: return OpKind::kMaximum;
  }
  throw ContractError("bad EwBinaryKind");
}

OpKind to_op(EwUnaryKind k) {
  switch (k) {
    case EwUnaryKind::neg: return OpKind::kNeg;
    case EwUnaryKind::exp: return OpKind::kExp;
    case EwUnaryKind::log: return OpKind::kLog;
    case EwUnaryKind::tanh: return OpKind::kTanh;
    case EwUnaryKind::sigmoid: return OpKind::kSigmoid;
    case EwUnaryKind::relu: return OpKind::kRelu;
    case EwUnaryKind::square: return OpKind::kSquare;
    case EwUnaryKind::sqrt: return OpKind::kSqrt;
  }
  throw ContractError("bad EwUnaryKind");
}

template <typename T>
void check_domain(EwUnaryKind k, const Tensor<T>& a) {
  if (k != EwUnaryKind::log && k != EwUnaryKind::sqrt) return;
  const T* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i) {
    const bool bad = k == EwUnaryKind::log ? !(p[i] > T(0)) : p[i] < T(0);
    if (bad) {
      throw DomainError(std::string(k == EwUnaryKind::log ? "log" : "sqrt") +
                        ": domain violation at index " + std::to_string(i) +
                        " (value " + std::to_string(static_cast<double>(p[i])) +
                        ")");
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> ew_binary(EwBinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  Shape oshape = detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::uninit(oshape);
  detail::ew_binary_kernel(to_op(kind), a.data(), a.shape(), b.data(),
                           b.shape(), out.mutable_data(), oshape);
  return out;
}

template <typename T>
Tensor<T> ew_unary(EwUnaryKind kind, const Tensor<T>& a) {
  check_domain(kind, a);
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  detail::ew_unary_kernel(to_op(kind), a.data(), a.shape(), out.mutable_data(),
                          a.shape());
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  Tensor<T> out = Tensor<T>::uninit({a.dim(0), b.dim(1)});
  detail::matmul_kernel(a.data(), a.dim(0), a.dim(1), b.data(), b.dim(1),
                        out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3) {
    throw ShapeError("bmm expects rank-3 operands, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  if (a.dim(2) != b.dim(1) ||
      (a.dim(0) != b.dim(0) && a.dim(0) != 1 && b.dim(0) != 1)) {
    throw ShapeError("bmm extents mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t batch = std::max(a.dim(0), b.dim(0));
  Tensor<T> out = Tensor<T>::uninit({batch, a.dim(1), b.dim(2)});
  detail::bmm_kernel(a.data(), a.dim(0), b.data(), b.dim(0), a.dim(1),
                     a.dim(2), b.dim(2), out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, const std::vector<int64_t>& perm) {
  if (static_cast<int64_t>(perm.size()) != a.rank()) {
    throw ShapeError("transpose perm rank mismatch");
  }
  Shape oshape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) oshape[i] = a.dim(perm[i]);
  Tensor<T> out = Tensor<T>::uninit(oshape);
  detail::transpose_kernel(a.data(), a.shape(), perm, out.mutable_data());
  return out;
}

namespace {

template <typename T>
Tensor<T> reduce_one_axis(OpKind kind, const Tensor<T>& a, int64_t axis) {
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  Shape oshape;
  for (int64_t i = 0; i < a.rank(); ++i)
    if (i != axis) oshape.push_back(a.dim(i));
  Tensor<T> out = Tensor<T>::uninit(oshape);
  if (kind == OpKind::kReduceSum) {
    detail::reduce_sum_kernel(a.data(), outer, a.dim(axis), inner,
                              out.mutable_data());
  } else {
    detail::reduce_max_kernel(a.data(), outer, a.dim(axis), inner,
                              out.mutable_data());
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& a,
                 const std::set<int64_t>& axes) {
  int64_t count = 1;
  for (int64_t ax : axes) {
    if (ax < 0 || ax >= a.rank()) {
      throw ShapeError("reduce: invalid axis " + std::to_string(ax) +
                       " for shape " + shape_str(a.shape()));
    }
    count *= a.dim(ax);
  }
  Tensor<T> cur = a;
  // Descending order keeps remaining axis numbers stable.
  for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
    cur = reduce_one_axis(
        kind == ReduceKind::max ? OpKind::kReduceMax : OpKind::kReduceSum, cur,
        *it);
  }
  if (kind == ReduceKind::mean) {
    Tensor<T> scale = Tensor<T>::scalar(T(1) / static_cast<T>(count));
    cur = ew_binary(EwBinaryKind::mul, cur, scale);
  }
  return cur;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int64_t kh, int64_t kw, int64_t stride,
                 int64_t pad) {
  if (x.rank() != 4) throw ShapeError("im2col expects (N,C,H,W)");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = detail::conv_out_extent(H, kh, stride, pad);
  const int64_t Wo = detail::conv_out_extent(W, kw, stride, pad);
  Tensor<T> out = Tensor<T>::uninit({N, C * kh * kw, Ho * Wo});
  detail::im2col_kernel(x.data(), N, C, H, W, kh, kw, stride, pad,
                        out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, int64_t C, int64_t H, int64_t W,
                 int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
  if (cols.rank() != 3) throw ShapeError("col2im expects (N,CKK,P)");
  Tensor<T> out = Tensor<T>::uninit({cols.dim(0), C, H, W});
  detail::col2im_kernel(cols.data(), cols.dim(0), C, H, W, kh, kw, stride, pad,
                        out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                 int64_t pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d expects x (B,C,H,W) and w (D,C,kh,kw)");
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d channel mismatch: x " + shape_str(x.shape()) +
                     " vs w " + shape_str(w.shape()));
  }
  const int64_t B = x.dim(0), D = w.dim(0);
  const int64_t kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = detail::conv_out_extent(x.dim(2), kh, stride, pad);
  const int64_t Wo = detail::conv_out_extent(x.dim(3), kw, stride, pad);
  Tensor<T> cols = im2col(x, kh, kw, stride, pad);
  Tensor<T> wf = w.reshaped({1, D, w.dim(1) * kh * kw});
  Tensor<T> out = bmm(wf, cols);  // (B, D, Ho*Wo)
  (void)B;
  return out.reshaped({x.dim(0), D, Ho, Wo});
}

template <typename T>
Tensor<T> pool2d(PoolKind kind, const Tensor<T>& x, int64_t k,
                 int64_t stride) {
  if (x.rank() != 4) throw ShapeError("pool2d expects (N,C,H,W)");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = detail::conv_out_extent(H, k, stride, 0);
  const int64_t Wo = detail::conv_out_extent(W, k, stride, 0);
  Tensor<T> cols = im2col(x.reshaped({N * C, 1, H, W}), k, k, stride, 0);
  Tensor<T> red = reduce(kind == PoolKind::avg ? ReduceKind::mean
                                               : ReduceKind::max,
                         cols, {1});
  return red.reshaped({N, C, Ho, Wo});
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const Tensor<T>& ids) {
  if (table.rank() != 2) throw ShapeError("gather_rows expects table (V,E)");
  Shape oshape = ids.shape();
  oshape.push_back(table.dim(1));
  Tensor<T> out = Tensor<T>::uninit(oshape);
  detail::gather_rows_kernel(table.data(), table.dim(0), table.dim(1),
                             ids.data(), ids.size(), out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> scatter_add(const Tensor<T>& grad_out, const Tensor<T>& ids,
                      int64_t V) {
  if (grad_out.rank() < 1) throw ShapeError("scatter_add expects (...,E)");
  const int64_t E = grad_out.dim(grad_out.rank() - 1);
  if (grad_out.size() != ids.size() * E) {
    throw ShapeError("scatter_add: ids " + shape_str(ids.shape()) +
                     " incompatible with grads " + shape_str(grad_out.shape()));
  }
  Tensor<T> out = Tensor<T>::uninit({V, E});
  detail::scatter_add_kernel(grad_out.data(), ids.data(), ids.size(), E, V,
                             out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> slice_axis(const Tensor<T>& a, int64_t axis, int64_t start,
                     int64_t len) {
  if (axis < 0 || axis >= a.rank() || start < 0 ||
      start + len > a.dim(axis)) {
    throw ShapeError("slice_axis: bad axis/range for " + shape_str(a.shape()));
  }
  Shape oshape = a.shape();
  oshape[axis] = len;
  Tensor<T> out = Tensor<T>::uninit(oshape);
  detail::slice_axis_kernel(a.data(), a.shape(), axis, start, len,
                            out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> softmax_xent(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.rank() != 2 || labels.rank() != 1 ||
      logits.dim(0) != labels.dim(0)) {
    throw ShapeError("softmax_xent expects logits (N,K) and labels (N)");
  }
  Tensor<T> out = Tensor<T>::uninit({logits.dim(0)});
  detail::softmax_xent_kernel(logits.data(), labels.data(), logits.dim(0),
                              logits.dim(1), out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> gaussian(const Shape& shape, RngState& rng) {
  Tensor<T> out = Tensor<T>::uninit(shape);
  detail::gaussian_kernel(rng, out.mutable_data(), out.size());
  return out;
}

template <typename T>
Tensor<T> uniform(const Shape& shape, T lo, T hi, RngState& rng) {
  Tensor<T> out = Tensor<T>::uninit(shape);
  T* p = out.mutable_data();
  for (int64_t i = 0; i < out.size(); ++i) {
    p[i] = static_cast<T>(rng_uniform(rng, static_cast<double>(lo),
                                      static_cast<double>(hi)));
  }
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  const T* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) return false;
  return true;
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m = T(0);
  const T* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(p[i]));
  return m;
}

template <typename T>
T l2_norm(const Tensor<T>& a) {
  double s = 0;
  const T* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i)
    s += static_cast<double>(p[i]) * static_cast<double>(p[i]);
  return static_cast<T>(std::sqrt(s));
}

#define PEGRAD_INSTANTIATE_OPS(T)                                             \
  template Tensor<T> ew_binary<T>(EwBinaryKind, const Tensor<T>&,             \
                                  const Tensor<T>&);                          \
  template Tensor<T> ew_unary<T>(EwUnaryKind, const Tensor<T>&);              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> transpose<T>(const Tensor<T>&,                           \
                                  const std::vector<int64_t>&);               \
  template Tensor<T> reduce<T>(ReduceKind, const Tensor<T>&,                  \
                               const std::set<int64_t>&);                     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int64_t,   \
                               int64_t);                                      \
  template Tensor<T> pool2d<T>(PoolKind, const Tensor<T>&, int64_t, int64_t); \
  template Tensor<T> im2col<T>(const Tensor<T>&, int64_t, int64_t, int64_t,   \
                               int64_t);                                      \
  template Tensor<T> col2im<T>(const Tensor<T>&, int64_t, int64_t, int64_t,   \
                               int64_t, int64_t, int64_t, int64_t);           \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> scatter_add<T>(const Tensor<T>&, const Tensor<T>&,       \
                                    int64_t);                                 \
  template Tensor<T> slice_axis<T>(const Tensor<T>&, int64_t, int64_t,        \
                                   int64_t);                                  \
  template Tensor<T> softmax_xent<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> gaussian<T>(const Shape&, RngState&);                    \
  template Tensor<T> uniform<T>(const Shape&, T, T, RngState&);               \
  template bool all_finite<T>(const Tensor<T>&);                              \
  template T max_abs<T>(const Tensor<T>&);                                    \
  template T l2_norm<T>(const Tensor<T>&);

PEGRAD_INSTANTIATE_OPS(float)
PEGRAD_INSTANTIATE_OPS(double)

#undef PEGRAD_INSTANTIATE_OPS

}  // namespace pegrad
