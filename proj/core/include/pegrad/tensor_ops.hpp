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

#include <set>

#include "pegrad/ops.hpp"
#include "pegrad/rng.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad {

enum class EwBinaryKind { add, sub, mul, div, max };
enum class EwUnaryKind { neg, exp, log, tanh, sigmoid, relu, square, sqrt };
enum class ReduceKind { sum, mean, max };
enum class PoolKind { avg, max };

// Elementwise with trailing-aligned broadcasting (size-1 axes stretch).
template <typename T>
Tensor<T> ew_binary(EwBinaryKind kind, const Tensor<T>& a, const Tensor<T>& b);

// log requires strictly positive input, sqrt non-negative; violations raise
// DomainError naming the offending flat index.
template <typename T>
Tensor<T> ew_unary(EwUnaryKind kind, const Tensor<T>& a);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Batched matmul (ba,m,k) x (bb,k,n), ba in {1,bb}.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, const std::vector<int64_t>& perm);

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& a,
                 const std::set<int64_t>& axes);

// out[b,d,i,j] = sum_c sum_u sum_v x_pad[b,c,i*s+u,j*s+v] * w[d,c,u,v],
// realized as im2col + matmul. Output extents must be integral.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                 int64_t pad);

template <typename T>
Tensor<T> pool2d(PoolKind kind, const Tensor<T>& x, int64_t k, int64_t stride);

// x (N,C,H,W) -> (N, C*kh*kw, Ho*Wo)
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int64_t kh, int64_t kw, int64_t stride,
                 int64_t pad);

template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, int64_t C, int64_t H, int64_t W,
                 int64_t kh, int64_t kw, int64_t stride, int64_t pad);

// table (V,E), ids (B,L) with exact integral values in [0,V).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const Tensor<T>& ids);

// VJP of gather_rows; duplicate ids accumulate.
template <typename T>
Tensor<T> scatter_add(const Tensor<T>& grad_out, const Tensor<T>& ids,
                      int64_t V);

template <typename T>
Tensor<T> slice_axis(const Tensor<T>& a, int64_t axis, int64_t start,
                     int64_t len);

// logits (N,K) (K==1: binary sigmoid head), labels (N) -> per-example losses.
template <typename T>
Tensor<T> softmax_xent(const Tensor<T>& logits, const Tensor<T>& labels);

// i.i.d. standard normals, deterministic per (seed, stream, draw count).
template <typename T>
Tensor<T> gaussian(const Shape& shape, RngState& rng);

template <typename T>
Tensor<T> uniform(const Shape& shape, T lo, T hi, RngState& rng);

template <typename T>
bool all_finite(const Tensor<T>& a);

template <typename T>
T max_abs(const Tensor<T>& a);

// sqrt(sum of squares) over all elements.
template <typename T>
T l2_norm(const Tensor<T>& a);

}  // namespace pegrad
