// Test-only reference implementations, deliberately written as plain nested
// loops so they stay independent of the library's kernels.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pegrad/rng.hpp"
#include "pegrad/tensor.hpp"

namespace oracle {

using pegrad::RngState;
using pegrad::Shape;
using pegrad::Tensor;

inline Tensor<double> random_tensor(Shape shape, RngState& rng, double lo = -1,
                                    double hi = 1) {
  Tensor<double> t = Tensor<double>::uninit(shape);
  for (int64_t i = 0; i < t.size(); ++i) {
    t.mutable_data()[i] = pegrad::rng_uniform(rng, lo, hi);
  }
  return t;
}

// Straight triple loop, accumulation in long double.
inline Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> out = Tensor<double>::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      long double acc = 0;
      for (int64_t t = 0; t < k; ++t) {
        acc += static_cast<long double>(a.at(i * k + t)) * b.at(t * n + j);
      }
      out.mutable_data()[i * n + j] = static_cast<double>(acc);
    }
  }
  return out;
}

// Direct six-nested-loop convolution, zero padding.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w,
                             int64_t stride, int64_t pad) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t D = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> out = Tensor<double>::zeros({B, D, Ho, Wo});
  auto xat = [&](int64_t b, int64_t c, int64_t h, int64_t ww) -> double {
    if (h < 0 || h >= H || ww < 0 || ww >= W) return 0;
    return x.at(((b * C + c) * H + h) * W + ww);
  };
  for (int64_t b = 0; b < B; ++b)
    for (int64_t d = 0; d < D; ++d)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          double acc = 0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t u = 0; u < kh; ++u)
              for (int64_t v = 0; v < kw; ++v) {
                acc += xat(b, c, i * stride + u - pad, j * stride + v - pad) *
                       w.at(((d * C + c) * kh + u) * kw + v);
              }
          out.mutable_data()[((b * D + d) * Ho + i) * Wo + j] = acc;
        }
  return out;
}

inline Tensor<double> pool2d(bool max_pool, const Tensor<double>& x, int64_t k,
                             int64_t stride) {
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = (H - k) / stride + 1;
  const int64_t Wo = (W - k) / stride + 1;
  Tensor<double> out = Tensor<double>::zeros({B, C, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          double acc = max_pool ? -1e300 : 0;
          for (int64_t u = 0; u < k; ++u)
            for (int64_t v = 0; v < k; ++v) {
              const double val =
                  x.at(((b * C + c) * H + i * stride + u) * W + j * stride + v);
              acc = max_pool ? std::max(acc, val) : acc + val;
            }
          out.mutable_data()[((b * C + c) * Ho + i) * Wo + j] =
              max_pool ? acc : acc / (k * k);
        }
  return out;
}

// Materialize both operands to the broadcast shape, then combine.
inline Tensor<double> broadcast_binary(
    const std::function<double(double, double)>& f, const Tensor<double>& a,
    const Tensor<double>& b) {
  const size_t ra = a.shape().size(), rb = b.shape().size();
  const size_t r = std::max(ra, rb);
  Shape oshape(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - ra ? 1 : a.shape()[i - (r - ra)];
    const int64_t db = i < r - rb ? 1 : b.shape()[i - (r - rb)];
    oshape[i] = std::max(da, db);
  }
  auto materialize = [&](const Tensor<double>& t) {
    Tensor<double> m = Tensor<double>::zeros(oshape);
    const size_t rt = t.shape().size();
    std::vector<int64_t> idx(r, 0);
    for (int64_t flat = 0; flat < m.size(); ++flat) {
      int64_t src = 0;
      for (size_t d = 0; d < rt; ++d) {
        const int64_t extent = t.shape()[d];
        const int64_t i = idx[r - rt + d] % extent;  // stretch size-1 axes
        src = src * extent + (extent == 1 ? 0 : i);
      }
      m.mutable_data()[flat] = t.at(src);
      for (size_t d = r; d-- > 0;) {
        if (++idx[d] < oshape[d]) break;
        idx[d] = 0;
      }
    }
    return m;
  };
  Tensor<double> ma = materialize(a), mb = materialize(b);
  Tensor<double> out = Tensor<double>::zeros(oshape);
  for (int64_t i = 0; i < out.size(); ++i) {
    out.mutable_data()[i] = f(ma.at(i), mb.at(i));
  }
  return out;
}

inline Tensor<double> gather_rows(const Tensor<double>& table,
                                  const Tensor<double>& ids) {
  const int64_t E = table.dim(1);
  Shape oshape = ids.shape();
  oshape.push_back(E);
  Tensor<double> out = Tensor<double>::zeros(oshape);
  for (int64_t i = 0; i < ids.size(); ++i) {
    const int64_t id = static_cast<int64_t>(ids.at(i));
    for (int64_t e = 0; e < E; ++e) {
      out.mutable_data()[i * E + e] = table.at(id * E + e);
    }
  }
  return out;
}

inline Tensor<double> scatter_add(const Tensor<double>& grads,
                                  const Tensor<double>& ids, int64_t V) {
  const int64_t E = grads.dim(grads.rank() - 1);
  Tensor<double> out = Tensor<double>::zeros({V, E});
  for (int64_t i = 0; i < ids.size(); ++i) {
    const int64_t id = static_cast<int64_t>(ids.at(i));
    for (int64_t e = 0; e < E; ++e) {
      out.mutable_data()[id * E + e] += grads.at(i * E + e);
    }
  }
  return out;
}

// Cross-entropy in long double, naive formulation.
inline long double xent_scalar(const std::vector<long double>& logits,
                               int64_t label) {
  long double denom = 0;
  for (long double z : logits) denom += expl(z);
  return logl(denom) - logits[label];
}

// numpy-style closeness: |a-b| <= atol + rtol*|b| elementwise.
template <typename T>
bool allclose(const Tensor<T>& a, const Tensor<T>& b, double rtol,
              double atol) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a.at(i));
    const double y = static_cast<double>(b.at(i));
    if (std::isnan(x) || std::isnan(y)) return false;
    if (std::abs(x - y) > atol + rtol * std::abs(y)) return false;
  }
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.at(i)) -
                             static_cast<double>(b.at(i))));
  }
  return m;
}

}  // namespace oracle
