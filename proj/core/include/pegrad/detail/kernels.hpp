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

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pegrad/common.hpp"
#include "pegrad/detail/parallel.hpp"
#include "pegrad/ops.hpp"
#include "pegrad/rng.hpp"

// Low-level kernels shared by the eager tensor API and both execution modes
// of the graph interpreter. Keeping a single kernel per op is what makes the
// eager-vs-graph bit-equality contract hold: the same scalar op sequence runs
// per element regardless of mode.

namespace pegrad::detail {

// ---- broadcasting ----------------------------------------------------------

// Trailing-aligned broadcast: size-1 axes stretch, missing leading axes act
// as size 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Element strides of `from` laid out against the index space of `to`
// (stride 0 on stretched axes). Throws if `from` does not broadcast to `to`.
inline std::vector<int64_t> broadcast_strides(const Shape& from,
                                              const Shape& to) {
  const size_t rf = from.size(), rt = to.size();
  if (rf > rt) {
    throw ShapeError("cannot broadcast " + shape_str(from) + " to " +
                     shape_str(to));
  }
  std::vector<int64_t> fs = row_major_strides(from);
  std::vector<int64_t> out(rt, 0);
  for (size_t i = 0; i < rf; ++i) {
    const size_t ti = rt - rf + i;
    if (from[i] == to[ti]) {
      out[ti] = fs[i];
    } else if (from[i] == 1) {
      out[ti] = 0;
    } else {
      throw ShapeError("cannot broadcast " + shape_str(from) + " to " +
                       shape_str(to));
    }
  }
  return out;
}

// Odometer over an index space with per-operand strides; calls fn(offsets).
template <typename Fn>
void strided_for_each(const Shape& shape,
                      const std::vector<std::vector<int64_t>>& strides,
                      Fn&& fn) {
  const size_t r = shape.size();
  const size_t k = strides.size();
  const int64_t n = numel(shape);
  std::vector<int64_t> idx(r, 0);
  std::vector<int64_t> off(k, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    fn(off);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      for (size_t j = 0; j < k; ++j) off[j] += strides[j][d];
      if (idx[d] < shape[d]) break;
      for (size_t j = 0; j < k; ++j) off[j] -= strides[j][d] * shape[d];
      idx[d] = 0;
    }
  }
}

// ---- scalar bodies ---------------------------------------------------------

template <typename T>
inline T scalar_binary(OpKind k, T a, T b) {
  switch (k) {
    case OpKind::kAdd: return a + b;
    case OpKind::kSub: return a - b;
    case OpKind::kMul: return a * b;
    case OpKind::kDiv: return a / b;
    case OpKind::kMaximum: return a >= b ? a : b;
    case OpKind::kGtMask: return a > b ? T(1) : T(0);
    case OpKind::kGeMask: return a >= b ? T(1) : T(0);
    default: break;
  }
  throw ContractError("scalar_binary: not a binary op");
}

template <typename T>
inline T scalar_unary(OpKind k, T a) {
  switch (k) {
    case OpKind::kNeg: return -a;
    case OpKind::kExp: return std::exp(a);
    case OpKind::kLog: return std::log(a);
    case OpKind::kTanh: return std::tanh(a);
    case OpKind::kSigmoid: return T(1) / (T(1) + std::exp(-a));
    case OpKind::kRelu: return a > T(0) ? a : T(0);
    case OpKind::kSquare: return a * a;
    case OpKind::kSqrt: return std::sqrt(a);
    case OpKind::kBroadcast: return a;
    default: break;
  }
  throw ContractError("scalar_unary: not a unary op");
}

// ---- elementwise kernels ---------------------------------------------------

template <typename T>
void ew_binary_kernel(OpKind k, const T* a, const Shape& ashape, const T* b,
                      const Shape& bshape, T* out, const Shape& oshape) {
  if (ashape == oshape && bshape == oshape) {
    const int64_t n = numel(oshape);
    for (int64_t i = 0; i < n; ++i) out[i] = scalar_binary(k, a[i], b[i]);
    return;
  }
  std::vector<std::vector<int64_t>> strides{broadcast_strides(ashape, oshape),
                                            broadcast_strides(bshape, oshape)};
  int64_t o = 0;
  strided_for_each(oshape, strides, [&](const std::vector<int64_t>& off) {
    out[o++] = scalar_binary(k, a[off[0]], b[off[1]]);
  });
}

template <typename T>
void ew_unary_kernel(OpKind k, const T* a, const Shape& ashape, T* out,
                     const Shape& oshape) {
  if (ashape == oshape) {
    const int64_t n = numel(oshape);
    for (int64_t i = 0; i < n; ++i) out[i] = scalar_unary(k, a[i]);
    return;
  }
  // kBroadcast (or unary applied through a stretch)
  std::vector<std::vector<int64_t>> strides{broadcast_strides(ashape, oshape)};
  int64_t o = 0;
  strided_for_each(oshape, strides, [&](const std::vector<int64_t>& off) {
    out[o++] = scalar_unary(k, a[off[0]]);
  });
}

// ---- contractions ----------------------------------------------------------

// Per-row product with the contraction blocked four deep. The adds per
// output element stay in ascending kk order, so the result is bitwise
// identical to the plain triple loop.
template <typename T>
void matmul_rows(const T* __restrict a, int64_t k, const T* __restrict b,
                 int64_t n, T* __restrict out, int64_t row_lo,
                 int64_t row_hi) {
  for (int64_t i = row_lo; i < row_hi; ++i) {
    const T* __restrict ai = a + i * k;
    T* __restrict oi = out + i * n;
    {
      const T av = ai[0];
      const T* bk = b;
      for (int64_t j = 0; j < n; ++j) oi[j] = av * bk[j];
    }
    int64_t kk = 1;
    for (; kk + 8 <= k; kk += 8) {
      const T a0 = ai[kk], a1 = ai[kk + 1], a2 = ai[kk + 2], a3 = ai[kk + 3];
      const T a4 = ai[kk + 4], a5 = ai[kk + 5], a6 = ai[kk + 6],
              a7 = ai[kk + 7];
      const T* b0 = b + kk * n;
      for (int64_t j = 0; j < n; ++j) {
        T acc = oi[j];
        acc += a0 * b0[j];
        acc += a1 * b0[n + j];
        acc += a2 * b0[2 * n + j];
        acc += a3 * b0[3 * n + j];
        acc += a4 * b0[4 * n + j];
        acc += a5 * b0[5 * n + j];
        acc += a6 * b0[6 * n + j];
        acc += a7 * b0[7 * n + j];
        oi[j] = acc;
      }
    }
    for (; kk + 4 <= k; kk += 4) {
      const T a0 = ai[kk], a1 = ai[kk + 1], a2 = ai[kk + 2], a3 = ai[kk + 3];
      const T* b0 = b + kk * n;
      for (int64_t j = 0; j < n; ++j) {
        T acc = oi[j];
        acc += a0 * b0[j];
        acc += a1 * b0[n + j];
        acc += a2 * b0[2 * n + j];
        acc += a3 * b0[3 * n + j];
        oi[j] = acc;
      }
    }
    for (; kk < k; ++kk) {
      const T av = ai[kk];
      const T* bk = b + kk * n;
      for (int64_t j = 0; j < n; ++j) oi[j] += av * bk[j];
    }
  }
}

// Output rows of sizeable products split across two threads; every element
// is still produced by the identical sequential per-row loop.
constexpr int64_t kParallelFlopThreshold = 1 << 19;

template <typename T>
void matmul_kernel(const T* a, int64_t m, int64_t k, const T* b, int64_t n,
                   T* out) {
  if (k == 0) {
    std::memset(out, 0, sizeof(T) * m * n);
    return;
  }
  if (2 * m * k * n >= kParallelFlopThreshold && m >= 2) {
    struct Ctx {
      const T *a, *b;
      T* out;
      int64_t k, n;
    } ctx{a, b, out, k, n};
    auto body = +[](void* raw, int64_t lo, int64_t hi) {
      Ctx* c = static_cast<Ctx*>(raw);
      matmul_rows(c->a, c->k, c->b, c->n, c->out, lo, hi);
    };
    if (parallel_try_run(m, body, &ctx)) return;
  }
  matmul_rows(a, k, b, n, out, 0, m);
}

// Either batch extent may be 1 (broadcast); otherwise they must match.
template <typename T>
void bmm_slices(const T* a, int64_t ba, const T* b, int64_t bb, int64_t m,
                int64_t k, int64_t n, T* out, int64_t lo, int64_t hi) {
  for (int64_t i = lo; i < hi; ++i) {
    matmul_rows(a + (ba == 1 ? 0 : i * m * k), k,
                b + (bb == 1 ? 0 : i * k * n), n, out + i * m * n, 0, m);
  }
}

template <typename T>
void bmm_kernel(const T* a, int64_t ba, const T* b, int64_t bb, int64_t m,
                int64_t k, int64_t n, T* out) {
  const int64_t batch = std::max(ba, bb);
  if (k == 0) {
    std::memset(out, 0, sizeof(T) * batch * m * n);
    return;
  }
  if (2 * batch * m * k * n >= kParallelFlopThreshold && batch >= 2) {
    struct Ctx {
      const T *a, *b;
      T* out;
      int64_t ba, bb, m, k, n;
    } ctx{a, b, out, ba, bb, m, k, n};
    auto body = +[](void* raw, int64_t lo, int64_t hi) {
      Ctx* c = static_cast<Ctx*>(raw);
      bmm_slices(c->a, c->ba, c->b, c->bb, c->m, c->k, c->n, c->out, lo, hi);
    };
    if (parallel_try_run(batch, body, &ctx)) return;
  }
  bmm_slices(a, ba, b, bb, m, k, n, out, 0, batch);
}

// ---- data movement ---------------------------------------------------------

template <typename T>
void transpose_kernel(const T* a, const Shape& ashape,
                      const std::vector<int64_t>& perm, T* out) {
  const size_t r = ashape.size();
  if (r == 2 && perm[0] == 1) {
    const int64_t m = ashape[0], n = ashape[1];
    for (int64_t j = 0; j < n; ++j) {
      for (int64_t i = 0; i < m; ++i) out[j * m + i] = a[i * n + j];
    }
    return;
  }
  if (r == 3 && perm[0] == 0 && perm[1] == 2 && perm[2] == 1) {
    const int64_t b = ashape[0], m = ashape[1], n = ashape[2];
    for (int64_t s = 0; s < b; ++s) {
      const T* as = a + s * m * n;
      T* os = out + s * m * n;
      for (int64_t j = 0; j < n; ++j) {
        for (int64_t i = 0; i < m; ++i) os[j * m + i] = as[i * n + j];
      }
    }
    return;
  }
  Shape oshape(r);
  for (size_t i = 0; i < r; ++i) oshape[i] = ashape[perm[i]];
  std::vector<int64_t> astr = row_major_strides(ashape);
  std::vector<int64_t> pstr(r);
  for (size_t i = 0; i < r; ++i) pstr[i] = astr[perm[i]];
  int64_t o = 0;
  strided_for_each(oshape, {pstr}, [&](const std::vector<int64_t>& off) {
    out[o++] = a[off[0]];
  });
}

template <typename T>
void slice_axis_kernel(const T* a, const Shape& ashape, int64_t axis,
                       int64_t start, int64_t len, T* out) {
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= ashape[i];
  for (size_t i = axis + 1; i < ashape.size(); ++i) inner *= ashape[i];
  const int64_t n = ashape[axis];
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out + o * len * inner, a + (o * n + start) * inner,
                sizeof(T) * len * inner);
  }
}

template <typename T>
void pad_axis_kernel(const T* a, const Shape& ashape, int64_t axis,
                     int64_t before, int64_t total, T* out) {
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= ashape[i];
  for (size_t i = axis + 1; i < ashape.size(); ++i) inner *= ashape[i];
  const int64_t n = ashape[axis];
  std::memset(out, 0, sizeof(T) * outer * total * inner);
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out + (o * total + before) * inner, a + o * n * inner,
                sizeof(T) * n * inner);
  }
}

// ---- reductions over one axis ----------------------------------------------

template <typename T>
void reduce_sum_kernel(const T* a, int64_t outer, int64_t n, int64_t inner,
                       T* out) {
  std::memset(out, 0, sizeof(T) * outer * inner);
  for (int64_t o = 0; o < outer; ++o) {
    const T* ao = a + o * n * inner;
    T* oo = out + o * inner;
    for (int64_t t = 0; t < n; ++t) {
      const T* at = ao + t * inner;
      for (int64_t i = 0; i < inner; ++i) oo[i] += at[i];
    }
  }
}

template <typename T>
void reduce_max_kernel(const T* a, int64_t outer, int64_t n, int64_t inner,
                       T* out) {
  for (int64_t o = 0; o < outer; ++o) {
    const T* ao = a + o * n * inner;
    T* oo = out + o * inner;
    std::memcpy(oo, ao, sizeof(T) * inner);
    for (int64_t t = 1; t < n; ++t) {
      const T* at = ao + t * inner;
      for (int64_t i = 0; i < inner; ++i)
        if (at[i] > oo[i]) oo[i] = at[i];
    }
  }
}

// Routes g to the first occurrence of the maximum along the reduced axis
// (deterministic under ties).
template <typename T>
void max_grad_kernel(const T* x, const T* g, int64_t outer, int64_t n,
                     int64_t inner, T* out) {
  std::memset(out, 0, sizeof(T) * outer * n * inner);
  for (int64_t o = 0; o < outer; ++o) {
    const T* xo = x + o * n * inner;
    T* oo = out + o * n * inner;
    for (int64_t i = 0; i < inner; ++i) {
      int64_t best = 0;
      T bv = xo[i];
      for (int64_t t = 1; t < n; ++t) {
        if (xo[t * inner + i] > bv) {
          bv = xo[t * inner + i];
          best = t;
        }
      }
      oo[best * inner + i] = g[o * inner + i];
    }
  }
}

// ---- im2col / col2im -------------------------------------------------------

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride,
                               int64_t pad) {
  const int64_t span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    throw ShapeError("conv window " + std::to_string(k) + " stride " +
                     std::to_string(stride) + " pad " + std::to_string(pad) +
                     " does not produce an integral extent over " +
                     std::to_string(in));
  }
  return span / stride + 1;
}

// x (N,C,H,W) -> cols (N, C*kh*kw, Ho*Wo)
template <typename T>
void im2col_kernel(const T* x, int64_t N, int64_t C, int64_t H, int64_t W,
                   int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                   T* out) {
  const int64_t Ho = conv_out_extent(H, kh, stride, pad);
  const int64_t Wo = conv_out_extent(W, kw, stride, pad);
  const int64_t P = Ho * Wo;
  for (int64_t nidx = 0; nidx < N; ++nidx) {
    const T* xn = x + nidx * C * H * W;
    T* on = out + nidx * C * kh * kw * P;
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t u = 0; u < kh; ++u) {
        for (int64_t v = 0; v < kw; ++v) {
          T* row = on + ((c * kh + u) * kw + v) * P;
          for (int64_t i = 0; i < Ho; ++i) {
            const int64_t hi = i * stride + u - pad;
            for (int64_t j = 0; j < Wo; ++j) {
              const int64_t wj = j * stride + v - pad;
              row[i * Wo + j] = (hi >= 0 && hi < H && wj >= 0 && wj < W)
                                    ? xn[(c * H + hi) * W + wj]
                                    : T(0);
            }
          }
        }
      }
    }
  }
}

// cols (N, C*kh*kw, Ho*Wo) -> x (N,C,H,W), overlapping windows accumulate.
template <typename T>
void col2im_kernel(const T* cols, int64_t N, int64_t C, int64_t H, int64_t W,
                   int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                   T* out) {
  const int64_t Ho = conv_out_extent(H, kh, stride, pad);
  const int64_t Wo = conv_out_extent(W, kw, stride, pad);
  const int64_t P = Ho * Wo;
  std::memset(out, 0, sizeof(T) * N * C * H * W);
  for (int64_t nidx = 0; nidx < N; ++nidx) {
    const T* cn = cols + nidx * C * kh * kw * P;
    T* xn = out + nidx * C * H * W;
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t u = 0; u < kh; ++u) {
        for (int64_t v = 0; v < kw; ++v) {
          const T* row = cn + ((c * kh + u) * kw + v) * P;
          for (int64_t i = 0; i < Ho; ++i) {
            const int64_t hi = i * stride + u - pad;
            if (hi < 0 || hi >= H) continue;
            for (int64_t j = 0; j < Wo; ++j) {
              const int64_t wj = j * stride + v - pad;
              if (wj < 0 || wj >= W) continue;
              xn[(c * H + hi) * W + wj] += row[i * Wo + j];
            }
          }
        }
      }
    }
  }
}

// ---- embedding -------------------------------------------------------------

template <typename T>
int64_t checked_id(T raw, int64_t V, int64_t position, const char* what) {
  const double v = static_cast<double>(raw);
  const int64_t id = static_cast<int64_t>(std::llround(v));
  if (static_cast<double>(id) != v) {
    throw IndexError(std::string(what) + ": non-integral id at position " +
                     std::to_string(position));
  }
  if (id < 0 || id >= V) {
    throw IndexError(std::string(what) + ": id " + std::to_string(id) +
                     " out of range [0," + std::to_string(V) +
                     ") at position " + std::to_string(position));
  }
  return id;
}

// table (V,E), ids (n) flat -> out (n,E)
template <typename T>
void gather_rows_kernel(const T* table, int64_t V, int64_t E, const T* ids,
                        int64_t n, T* out) {
  for (int64_t i = 0; i < n; ++i) {
    const int64_t id = checked_id(ids[i], V, i, "gather_rows");
    std::memcpy(out + i * E, table + id * E, sizeof(T) * E);
  }
}

// g (n,E), ids (n) -> out (V,E); duplicate ids accumulate.
template <typename T>
void scatter_add_kernel(const T* g, const T* ids, int64_t n, int64_t E,
                        int64_t V, T* out) {
  std::memset(out, 0, sizeof(T) * V * E);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t id = checked_id(ids[i], V, i, "scatter_add");
    const T* gi = g + i * E;
    T* oi = out + id * E;
    for (int64_t e = 0; e < E; ++e) oi[e] += gi[e];
  }
}

// ---- classification loss ---------------------------------------------------

// logits (N,K), labels (N) -> per-example losses (N). K == 1 is the binary
// sigmoid head with labels in {0,1}.
template <typename T>
void softmax_xent_kernel(const T* logits, const T* labels, int64_t N,
                         int64_t K, T* out) {
  for (int64_t i = 0; i < N; ++i) {
    if (K == 1) {
      const int64_t y = checked_id(labels[i], 2, i, "softmax_xent label");
      const T z = logits[i];
      const T az = z < T(0) ? -z : z;
      out[i] = (z > T(0) ? z : T(0)) - z * T(y) + std::log1p(std::exp(-az));
      continue;
    }
    const int64_t y = checked_id(labels[i], K, i, "softmax_xent label");
    const T* zi = logits + i * K;
    T m = zi[0];
    for (int64_t k = 1; k < K; ++k)
      if (zi[k] > m) m = zi[k];
    T s = T(0);
    for (int64_t k = 0; k < K; ++k) s += std::exp(zi[k] - m);
    out[i] = m + std::log(s) - zi[y];
  }
}

// d loss_i / d logits scaled by the per-example cotangent g (N).
template <typename T>
void softmax_xent_grad_kernel(const T* logits, const T* labels, const T* g,
                              int64_t N, int64_t K, T* out) {
  for (int64_t i = 0; i < N; ++i) {
    if (K == 1) {
      const int64_t y = checked_id(labels[i], 2, i, "softmax_xent label");
      const T z = logits[i];
      const T p = T(1) / (T(1) + std::exp(-z));
      out[i] = (p - T(y)) * g[i];
      continue;
    }
    const int64_t y = checked_id(labels[i], K, i, "softmax_xent label");
    const T* zi = logits + i * K;
    T* oi = out + i * K;
    T m = zi[0];
    for (int64_t k = 1; k < K; ++k)
      if (zi[k] > m) m = zi[k];
    T s = T(0);
    for (int64_t k = 0; k < K; ++k) s += std::exp(zi[k] - m);
    for (int64_t k = 0; k < K; ++k) {
      T p = std::exp(zi[k] - m) / s;
      if (k == y) p -= T(1);
      oi[k] = p * g[i];
    }
  }
}

// ---- reductions helpers ------------------------------------------------

// Sum of squares in double with a fixed four-lane split; deterministic and
// wide enough for the vectorizer. Shared by every path that computes
// per-example norms so their results agree bit for bit.
template <typename T>
double sumsq_lanes(const T* p, int64_t n) {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double v0 = p[i], v1 = p[i + 1], v2 = p[i + 2], v3 = p[i + 3];
    a0 += v0 * v0;
    a1 += v1 * v1;
    a2 += v2 * v2;
    a3 += v3 * v3;
  }
  for (; i < n; ++i) {
    const double v = p[i];
    a0 += v * v;
  }
  return (a0 + a1) + (a2 + a3);
}

// ---- random ----------------------------------------------------------------

// i.i.d. standard normals via Box-Muller over splitmix64 uniforms. Generated
// in double then cast, so a given (seed, stream) is bytewise reproducible per
// element width. The counter-based source gives random access, so halves of
// a large fill can run on both threads with identical results.
template <typename T>
void gaussian_fill_range(uint64_t seed, uint64_t stream, T* out, int64_t n,
                         int64_t pair_lo, int64_t pair_hi) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (int64_t pair = pair_lo; pair < pair_hi; ++pair) {
    const int64_t i = 2 * pair;
    const double u1 =
        static_cast<double>((rng_value_at(seed, stream, 2 * pair) >> 11) + 1) *
        0x1.0p-53;
    const double u2 =
        static_cast<double>(
            (rng_value_at(seed, stream, 2 * pair + 1) >> 11) + 1) *
        0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    out[i] = static_cast<T>(r * std::cos(kTwoPi * u2));
    if (i + 1 < n) out[i + 1] = static_cast<T>(r * std::sin(kTwoPi * u2));
  }
}

template <typename T>
void gaussian_kernel(RngState& rng, T* out, int64_t n) {
  const int64_t pairs = (n + 1) / 2;
  if (rng.counter != 0) {
    // Mid-stream draws keep the strict sequential contract.
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    for (int64_t i = 0; i < n; i += 2) {
      const double u1 = rng_next_unit_open(rng);
      const double u2 = rng_next_unit_open(rng);
      const double r = std::sqrt(-2.0 * std::log(u1));
      out[i] = static_cast<T>(r * std::cos(kTwoPi * u2));
      if (i + 1 < n) out[i + 1] = static_cast<T>(r * std::sin(kTwoPi * u2));
    }
    return;
  }
  if (n >= 2048) {
    struct Ctx {
      uint64_t seed, stream;
      T* out;
      int64_t n;
    } ctx{rng.seed, rng.stream, out, n};
    auto body = +[](void* raw, int64_t lo, int64_t hi) {
      Ctx* c = static_cast<Ctx*>(raw);
      gaussian_fill_range(c->seed, c->stream, c->out, c->n, lo, hi);
    };
    if (parallel_try_run(pairs, body, &ctx)) {
      rng.counter += 2 * pairs;
      return;
    }
  }
  gaussian_fill_range(rng.seed, rng.stream, out, n, 0, pairs);
  rng.counter += 2 * pairs;
}

}  // namespace pegrad::detail
