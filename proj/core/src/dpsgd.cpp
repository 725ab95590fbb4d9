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

#include "pegrad/dpsgd.hpp"

#include <cmath>

#include "pegrad/detail/kernels.hpp"
#include "pegrad/detail/parallel.hpp"
#include "pegrad/tensor_ops.hpp"

namespace pegrad {

namespace {
// Noise stream ids live far above model-init and data streams.
constexpr uint64_t kNoiseStreamBase = uint64_t(1) << 32;

uint64_t noise_stream(int64_t step_index, size_t param_ordinal) {
  return kNoiseStreamBase + static_cast<uint64_t>(step_index) * 4096 +
         static_cast<uint64_t>(param_ordinal);
}
}  // namespace

template <typename T>
void validate(const DpConfig<T>& cfg, int64_t batch) {
  if (!(cfg.clip_norm > T(0))) {
    throw ConfigError("DpConfig: clip norm must be positive");
  }
  if (cfg.noise_multiplier < T(0)) {
    throw ConfigError("DpConfig: noise multiplier must be non-negative");
  }
  if (!(cfg.learning_rate > T(0))) {
    throw ConfigError("DpConfig: learning rate must be positive");
  }
  if (cfg.microbatch < 1 || batch % cfg.microbatch != 0) {
    throw ConfigError("DpConfig: microbatch size " +
                      std::to_string(cfg.microbatch) +
                      " must divide the batch size " + std::to_string(batch));
  }
}

template <typename T>
PerExampleGrads<T> clip(const PerExampleGrads<T>& grads, T clip_norm,
                        StepReport<T>* report) {
  if (grads.norms_only) {
    throw ContractError(
        "clip: norms-only gradients cannot be clipped; use clip_scales with "
        "a weighted backward pass");
  }
  if (!(clip_norm > T(0))) throw ContractError("clip: C must be positive");
  Tensor<T> norms = per_example_global_norms(grads);
  PerExampleGrads<T> out;
  out.batch = grads.batch;
  int64_t clipped = 0;
  std::vector<T> scales(grads.batch);
  for (int64_t i = 0; i < grads.batch; ++i) {
    const T n = norms.at(i);
    scales[i] = n > clip_norm ? clip_norm / n : T(1);
    if (n > clip_norm) ++clipped;
  }
  for (const Tensor<T>& stack : grads.stacks) {
    Tensor<T> scaled = Tensor<T>::uninit(stack.shape());
    const int64_t per = stack.size() / grads.batch;
    for (int64_t i = 0; i < grads.batch; ++i) {
      const T s = scales[i];
      const T* src = stack.data() + i * per;
      T* dst = scaled.mutable_data() + i * per;
      for (int64_t j = 0; j < per; ++j) dst[j] = src[j] * s;
    }
    out.stacks.push_back(std::move(scaled));
  }
  if (report) {
    report->pre_clip_norms = norms;
    report->clipped_count = clipped;
  }
  return out;
}

template <typename T>
Tensor<T> clip_scales(const Tensor<T>& norms, T clip_norm) {
  Tensor<T> out = Tensor<T>::uninit(norms.shape());
  for (int64_t i = 0; i < norms.size(); ++i) {
    const T n = norms.at(i);
    if (n < T(0)) throw ContractError("clip_scales: negative norm");
    out.mutable_data()[i] = n > clip_norm ? clip_norm / n : T(1);
  }
  return out;
}

template <typename T>
PerExampleGrads<T> microbatch(const PerExampleGrads<T>& grads, int64_t m) {
  if (grads.norms_only) {
    throw ConfigError(
        "microbatch: norms-only gradients cannot be microbatched (microbatch "
        "means are not derivable from per-example norms)");
  }
  if (m < 1 || grads.batch % m != 0) {
    throw ConfigError("microbatch: m must divide the batch size");
  }
  if (m == 1) return grads;
  const int64_t units = grads.batch / m;
  PerExampleGrads<T> out;
  out.batch = units;
  const T inv = T(1) / static_cast<T>(m);
  for (const Tensor<T>& stack : grads.stacks) {
    const int64_t per = stack.size() / grads.batch;
    Shape s = stack.shape();
    s[0] = units;
    Tensor<T> reduced = Tensor<T>::zeros(s);
    for (int64_t u = 0; u < units; ++u) {
      T* dst = reduced.mutable_data() + u * per;
      for (int64_t j = 0; j < m; ++j) {
        const T* src = stack.data() + (u * m + j) * per;
        for (int64_t e = 0; e < per; ++e) dst[e] += src[e];
      }
      for (int64_t e = 0; e < per; ++e) dst[e] *= inv;
    }
    out.stacks.push_back(std::move(reduced));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> aggregate_noise(const PerExampleGrads<T>& clipped,
                                       const DpConfig<T>& cfg,
                                       int64_t step_index,
                                       std::vector<uint64_t>* streams_used) {
  if (clipped.norms_only) {
    throw ContractError("aggregate_noise: needs materialized gradients");
  }
  const int64_t units = clipped.batch;
  const T inv = T(1) / static_cast<T>(units);
  std::vector<Tensor<T>> out;
  for (size_t p = 0; p < clipped.stacks.size(); ++p) {
    const Tensor<T>& stack = clipped.stacks[p];
    const int64_t per = stack.size() / units;
    Shape s(stack.shape().begin() + 1, stack.shape().end());
    Tensor<T> acc = Tensor<T>::zeros(s);
    T* a = acc.mutable_data();
    for (int64_t i = 0; i < units; ++i) {
      const T* src = stack.data() + i * per;
      for (int64_t j = 0; j < per; ++j) a[j] += src[j];
    }
    if (cfg.noise_multiplier > T(0)) {
      const uint64_t stream = noise_stream(step_index, p);
      if (streams_used) streams_used->push_back(stream);
      RngState rng(cfg.seed, stream);
      Tensor<T> noise = gaussian<T>(s, rng);
      const T scale = cfg.noise_multiplier * cfg.clip_norm;
      const T* n = noise.data();
      for (int64_t j = 0; j < per; ++j) a[j] += scale * n[j];
    }
    for (int64_t j = 0; j < per; ++j) a[j] *= inv;
    out.push_back(std::move(acc));
  }
  return out;
}

namespace {

template <typename T>
void apply_update(models::Model<T>& model, const std::vector<Tensor<T>>& g,
                  T lr) {
  for (size_t p = 0; p < model.params.size(); ++p) {
    Tensor<T> next = Tensor<T>::uninit(model.params[p].shape());
    const T* cur = model.params[p].data();
    const T* gp = g[p].data();
    T* dst = next.mutable_data();
    for (int64_t j = 0; j < next.size(); ++j) dst[j] = cur[j] - lr * gp[j];
    model.params[p] = std::move(next);
  }
}

}  // namespace

template <typename T>
StepReport<T> dpsgd_step(models::Model<T>& model, GradEngine<T>& engine,
                         const Tensor<T>& x, const Tensor<T>& y,
                         const DpConfig<T>& cfg, int64_t step_index) {
  validate(cfg, engine.batch());
  StepReport<T> report;

  if (engine.strategy() == Strategy::norms) {
    if (cfg.microbatch != 1) {
      throw ConfigError(
          "dpsgd_step: the norms-only strategy supports microbatch = 1 only");
    }
    PerExampleGrads<T> norms = engine.compute(x, y, model.params);
    report.pre_clip_norms = norms.norms;
    Tensor<T> scales = clip_scales(norms.norms, cfg.clip_norm);
    for (int64_t i = 0; i < scales.size(); ++i) {
      if (scales.at(i) < T(1)) ++report.clipped_count;
    }
    // The clipped sum as one weighted backward pass.
    std::vector<Tensor<T>> summed =
        engine.weighted_grad_sum(x, y, scales, model.params);
    // Wrap as a single-unit stack so the aggregation path is shared.
    PerExampleGrads<T> pseudo;
    pseudo.batch = 1;
    for (Tensor<T>& t : summed) {
      Shape s = t.shape();
      s.insert(s.begin(), 1);
      pseudo.stacks.push_back(t.reshaped(s));
    }
    DpConfig<T> unit_cfg = cfg;
    std::vector<Tensor<T>> noisy =
        aggregate_noise(pseudo, unit_cfg, step_index, &report.noise_streams);
    // aggregate_noise divided by 1; DPSGD averages over the batch.
    const T invb = T(1) / static_cast<T>(engine.batch());
    for (Tensor<T>& t : noisy) {
      Tensor<T> scaled = Tensor<T>::uninit(t.shape());
      for (int64_t j = 0; j < t.size(); ++j) {
        scaled.mutable_data()[j] = t.at(j) * invb;
      }
      t = std::move(scaled);
    }
    apply_update(model, noisy, cfg.learning_rate);
    return report;
  }

  if (cfg.microbatch == 1 && engine.supports_views()) {
    // Fused pipeline over workspace views: one pass for the norms, one
    // scaled accumulation per parameter block. Identical arithmetic order
    // to microbatch -> clip -> aggregate_noise, without materializing the
    // scaled stacks.
    auto views = engine.compute_views(x, y, model.params);
    const int64_t B = engine.batch();
    report.pre_clip_norms = Tensor<T>::uninit({B});
    std::vector<T> scales(B);
    int64_t total_per = 0;
    for (const auto& v : views) total_per += numel(v.shape) / B;
    {
      // Examples are independent; splitting them across both threads leaves
      // each norm's accumulation order untouched.
      struct Ctx {
        const std::vector<typename Executor<T>::ValueView>* views;
        T* norms;
        T* scales;
        int64_t B;
        T clip;
      } ctx{&views, report.pre_clip_norms.mutable_data(), scales.data(), B,
            cfg.clip_norm};
      auto body = +[](void* raw, int64_t lo, int64_t hi) {
        Ctx* c = static_cast<Ctx*>(raw);
        for (int64_t i = lo; i < hi; ++i) {
          double acc = 0;
          for (const auto& v : *c->views) {
            const int64_t per = numel(v.shape) / c->B;
            acc += detail::sumsq_lanes(v.data + i * per, per);
          }
          const T n = static_cast<T>(std::sqrt(acc));
          c->norms[i] = n;
          c->scales[i] = n > c->clip ? c->clip / n : T(1);
        }
      };
      if (total_per * B < (int64_t(1) << 18) ||
          !detail::parallel_try_run(B, body, &ctx)) {
        body(&ctx, 0, B);
      }
      for (int64_t i = 0; i < B; ++i) {
        if (report.pre_clip_norms.at(i) > cfg.clip_norm) {
          ++report.clipped_count;
        }
      }
    }
    const T inv = T(1) / static_cast<T>(B);
    std::vector<Tensor<T>> noisy;
    for (size_t p = 0; p < views.size(); ++p) {
      const int64_t per = numel(views[p].shape) / B;
      Shape s(views[p].shape.begin() + 1, views[p].shape.end());
      Tensor<T> acc = Tensor<T>::zeros(s);
      T* a = acc.mutable_data();
      // Column split: each output element keeps the full ascending-i
      // accumulation, so the result matches the sequential pipeline bit for
      // bit.
      struct SumCtx {
        const T* src;
        const T* scales;
        T* acc;
        int64_t B, per;
      } sum_ctx{views[p].data, scales.data(), a, B, per};
      auto sum_body = +[](void* raw, int64_t jlo, int64_t jhi) {
        SumCtx* c = static_cast<SumCtx*>(raw);
        for (int64_t i = 0; i < c->B; ++i) {
          const T s_i = c->scales[i];
          const T* src = c->src + i * c->per;
          for (int64_t j = jlo; j < jhi; ++j) {
            const T scaled = src[j] * s_i;
            c->acc[j] += scaled;
          }
        }
      };
      if (per * B < (int64_t(1) << 18) ||
          !detail::parallel_try_run(per, sum_body, &sum_ctx)) {
        sum_body(&sum_ctx, 0, per);
      }
      if (cfg.noise_multiplier > T(0)) {
        const uint64_t stream = noise_stream(step_index, p);
        report.noise_streams.push_back(stream);
        RngState rng(cfg.seed, stream);
        Tensor<T> noise = gaussian<T>(s, rng);
        const T scale = cfg.noise_multiplier * cfg.clip_norm;
        const T* n = noise.data();
        for (int64_t j = 0; j < per; ++j) a[j] += scale * n[j];
      }
      for (int64_t j = 0; j < per; ++j) a[j] *= inv;
      noisy.push_back(std::move(acc));
    }
    apply_update(model, noisy, cfg.learning_rate);
    return report;
  }

  PerExampleGrads<T> grads = engine.compute(x, y, model.params);
  PerExampleGrads<T> units = microbatch(grads, cfg.microbatch);
  PerExampleGrads<T> clipped = clip(units, cfg.clip_norm, &report);
  std::vector<Tensor<T>> noisy =
      aggregate_noise(clipped, cfg, step_index, &report.noise_streams);
  apply_update(model, noisy, cfg.learning_rate);
  return report;
}

template <typename T>
void sgd_step(models::Model<T>& model, GradEngine<T>& engine,
              const Tensor<T>& x, const Tensor<T>& y, T learning_rate) {
  std::vector<Tensor<T>> grads = engine.batch_grad_sum(x, y, model.params);
  const T inv = T(1) / static_cast<T>(engine.batch());
  for (Tensor<T>& g : grads) {
    Tensor<T> mean = Tensor<T>::uninit(g.shape());
    for (int64_t j = 0; j < g.size(); ++j) {
      mean.mutable_data()[j] = g.at(j) * inv;
    }
    g = std::move(mean);
  }
  apply_update(model, grads, learning_rate);
}

#define PEGRAD_INSTANTIATE_DPSGD(T)                                          \
  template void validate<T>(const DpConfig<T>&, int64_t);                    \
  template PerExampleGrads<T> clip<T>(const PerExampleGrads<T>&, T,          \
                                      StepReport<T>*);                       \
  template Tensor<T> clip_scales<T>(const Tensor<T>&, T);                    \
  template PerExampleGrads<T> microbatch<T>(const PerExampleGrads<T>&,       \
                                            int64_t);                        \
  template std::vector<Tensor<T>> aggregate_noise<T>(                        \
      const PerExampleGrads<T>&, const DpConfig<T>&, int64_t,                \
      std::vector<uint64_t>*);                                               \
  template StepReport<T> dpsgd_step<T>(models::Model<T>&, GradEngine<T>&,    \
                                       const Tensor<T>&, const Tensor<T>&,   \
                                       const DpConfig<T>&, int64_t);         \
  template void sgd_step<T>(models::Model<T>&, GradEngine<T>&,              \
                            const Tensor<T>&, const Tensor<T>&, T);

PEGRAD_INSTANTIATE_DPSGD(float)
PEGRAD_INSTANTIATE_DPSGD(double)

#undef PEGRAD_INSTANTIATE_DPSGD

}  // namespace pegrad
