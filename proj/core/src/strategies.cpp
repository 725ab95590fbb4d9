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

#include "pegrad/strategies.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "pegrad/autodiff.hpp"
#include "pegrad/detail/kernels.hpp"
#include "pegrad/vmap.hpp"

namespace pegrad {

using models::LayerKind;
using models::LayerTap;
using models::Model;
using models::ModelDesc;

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::naive: return "naive";
    case Strategy::vmap: return "vmap";
    case Strategy::outer: return "outer";
    case Strategy::norms: return "norms";
    case Strategy::groupconv: return "groupconv";
    case Strategy::jacmm: return "jacmm";
  }
  return "?";
}

std::vector<Strategy> all_strategies() {
  return {Strategy::naive, Strategy::vmap,      Strategy::outer,
          Strategy::norms, Strategy::groupconv, Strategy::jacmm};
}

Strategy strategy_from_name(const std::string& name) {
  for (Strategy s : all_strategies()) {
    if (name == strategy_name(s)) return s;
  }
  throw ConfigError("unknown strategy '" + name +
                    "' (expected naive, vmap, outer, norms, groupconv, "
                    "jacmm)");
}

namespace {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::global_avgpool: return "global_avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::relu: return "relu";
    case LayerKind::embedding: return "embedding";
    case LayerKind::seq_avgpool: return "seq_avgpool";
    case LayerKind::lstm: return "lstm";
  }
  return "?";
}

bool layer_allowed(Strategy s, LayerKind k) {
  switch (s) {
    case Strategy::naive:
    case Strategy::vmap:
      return true;
    case Strategy::outer:
    case Strategy::norms:
      return k == LayerKind::dense || k == LayerKind::relu;
    case Strategy::groupconv:
      return k == LayerKind::dense || k == LayerKind::relu ||
             k == LayerKind::conv || k == LayerKind::maxpool ||
             k == LayerKind::avgpool || k == LayerKind::global_avgpool ||
             k == LayerKind::flatten;
    case Strategy::jacmm:
      return k != LayerKind::lstm;
  }
  return false;
}

}  // namespace

bool strategy_supports(Strategy s, const ModelDesc& desc) {
  for (const auto& l : desc.layers) {
    if (!layer_allowed(s, l.kind)) return false;
  }
  return true;
}

void check_strategy_support(Strategy s, const ModelDesc& desc) {
  for (const auto& l : desc.layers) {
    if (!layer_allowed(s, l.kind)) {
      throw UnsupportedError(std::string("unsupported layer: ") +
                             layer_kind_name(l.kind) + " (strategy " +
                             strategy_name(s) + ", model " +
                             models::model_name(desc.kind) + ")");
    }
  }
}

namespace {

// Builds the layerwise-strategy tape: batched forward, one shared backward,
// and per-layer extraction of the per-example blocks, all in one graph.
// Outputs: "pex:<param ordinal>" stacks, or "normsq" for the norms variant.
Tape layerwise_tape(const ModelDesc& desc, int64_t batch, Strategy strat) {
  std::vector<LayerTap> taps;
  Tape fwd = models::batched_loss_tape(desc, batch, /*weighted=*/false, &taps);
  GradOptions opts;
  opts.mark_param_grads = false;
  for (const LayerTap& tap : taps) opts.cotangent_of.push_back(tap.linear_out);
  Tape with_cots = grad(fwd, opts);

  TapeBuilder tb(std::move(with_cots));
  std::vector<std::pair<int, Var>> stacks;  // (param ordinal, stack var)
  Var normsq{-1};

  for (size_t i = 0; i < taps.size(); ++i) {
    const LayerTap& tap = taps[i];
    Var cot{tb.tape().output_id("cot:" + std::to_string(i))};
    switch (tap.kind) {
      case LayerKind::dense: {
        Var act{tap.input};  // (B, in)
        const Shape sd = tb.shape_of(cot);  // (B, out)
        const Shape sa = tb.shape_of(act);
        if (strat == Strategy::norms) {
          // ||g_i||^2 = ||d_i||^2 * ||a_i||^2 + ||d_i||^2 (bias term)
          Var d2 = tb.reduce_sum(tb.square(cot), 1);
          Var a2 = tb.reduce_sum(tb.square(act), 1);
          Var term =
              tb.mul(d2, tb.add(a2, tb.constant_scalar(1.0)));
          normsq = normsq.id < 0 ? term : tb.add(normsq, term);
          break;
        }
        // per-example outer product a_i x d_i, matching the (in, out) layout
        Var dw = tb.bmm(tb.reshape(act, {batch, sa[1], 1}),
                        tb.reshape(cot, {batch, 1, sd[1]}));
        stacks.emplace_back(tap.param_w, dw);
        stacks.emplace_back(tap.param_b, cot);
        break;
      }
      case LayerKind::conv: {
        // dW_i: correlation of saved patches with the output cotangent,
        // batched over examples; db_i: spatial sum of the cotangent.
        Var patches{tap.patches};               // (B, CKK, P)
        const Shape sp = tb.shape_of(patches);
        const Shape sz = tb.shape_of(cot);      // (B, D, Ho, Wo)
        const Shape wshape = desc.param_shapes[tap.param_w];
        Var dz = tb.reshape(cot, {batch, sz[1], sz[2] * sz[3]});
        Var dw = tb.bmm(dz, tb.transpose(patches, {0, 2, 1}));  // (B,D,CKK)
        Shape stack_shape = wshape;
        stack_shape.insert(stack_shape.begin(), batch);
        stacks.emplace_back(tap.param_w, tb.reshape(dw, stack_shape));
        stacks.emplace_back(tap.param_b, tb.reduce_sum(dz, 2));
        break;
      }
      case LayerKind::embedding: {
        // Per-example scatter via id offsets into one (B*V, E) table.
        Var ids{tap.ids};  // (B, L)
        const Shape si = tb.shape_of(ids);
        const Shape se = tb.shape_of(cot);  // (B, L, E)
        const int64_t V = desc.param_shapes[tap.param_w][0];
        const int64_t E = se[2];
        std::vector<double> offsets(batch);
        for (int64_t b = 0; b < batch; ++b)
          offsets[b] = static_cast<double>(b * V);
        Var shifted = tb.add(ids, tb.constant({batch, 1}, offsets));
        Var flat_ids = tb.reshape(shifted, {batch * si[1]});
        Var flat_g = tb.reshape(cot, {batch * si[1], E});
        Var table = tb.scatter_add(flat_g, flat_ids, batch * V);
        stacks.emplace_back(tap.param_w,
                            tb.reshape(table, {batch, V, E}));
        break;
      }
      default:
        throw UnsupportedError(std::string("unsupported layer: ") +
                               layer_kind_name(tap.kind));
    }
  }

  if (strat == Strategy::norms) {
    tb.mark_output(normsq, "normsq");
  } else {
    for (const auto& [ordinal, var] : stacks) {
      tb.mark_output(var, "pex:" + std::to_string(ordinal));
    }
  }

  // Only the extraction results leave this tape; dropping the scaffold
  // outputs (forward losses/logits, tapped cotangents) lets DCE prune
  // whatever the extraction does not actually need.
  Tape t = tb.finish();
  t.loss = -1;
  std::vector<std::pair<int32_t, std::string>> kept;
  for (const auto& o : t.outputs) {
    if (o.second.rfind("pex:", 0) == 0 || o.second == "normsq") {
      kept.push_back(o);
    }
  }
  t.outputs = std::move(kept);
  return t;
}

}  // namespace

template <typename T>
struct GradEngine<T>::Impl {
  ModelDesc desc;
  Strategy strat;
  ExecMode exec_mode;
  int64_t B = 0;
  double trace_seconds = 0;

  std::unique_ptr<Executor<T>> main_exec;      // strategy pipeline
  std::unique_ptr<Executor<T>> weighted_exec;  // weighted batch gradient
  // main tape output index -> param ordinal (materializing strategies)
  std::vector<int> output_param;
  int64_t output_bytes = 0;

  std::unique_ptr<Executor<T>> make_exec(const Tape& tape) {
    if (exec_mode == ExecMode::eager) {
      return std::make_unique<Executor<T>>(
          std::make_shared<const Tape>(tape));
    }
    return std::make_unique<Executor<T>>(optimize(tape));
  }

  // Eager mode means no cached compilation: the program is re-derived on
  // every call, the way dynamic frameworks rebuild their autograd graph.
  // Graph mode hoists the trace into the constructor and replays it.
  Tape main_tape() const {
    switch (strat) {
      case Strategy::naive:
        return grad(models::per_example_loss_tape(desc));
      case Strategy::vmap:
        return vmap(grad(models::per_example_loss_tape(desc)), B,
                    {InAxis::lead, InAxis::lead});
      default:
        return layerwise_tape(desc, B, strat);
    }
  }

  Executor<T>& main(bool rederive) {
    if (rederive && exec_mode == ExecMode::eager) {
      main_exec = make_exec(main_tape());
    }
    return *main_exec;
  }

  std::vector<Tensor<T>> bind_run(Executor<T>& ex, const Tensor<T>& x,
                                  const Tensor<T>& y,
                                  const std::vector<Tensor<T>>& params,
                                  const Tensor<T>* w) {
    const Tape& t = ex.tape();
    std::vector<Tensor<T>> inputs;
    for (size_t i = 0; i < t.inputs.size(); ++i) {
      const std::string& name = t.input_names[i];
      const Shape& want = t.nodes[t.inputs[i]].shape;
      if (name == "x") {
        inputs.push_back(x.reshaped(want));
      } else if (name == "y") {
        inputs.push_back(y.reshaped(want));
      } else if (name == "w" && w) {
        inputs.push_back(w->reshaped(want));
      } else {
        throw ContractError("unexpected tape input '" + name + "'");
      }
    }
    return ex.run(params, inputs);
  }
};

template <typename T>
GradEngine<T>::GradEngine(const Model<T>& model, Strategy strategy,
                          int64_t batch, ExecMode mode)
    : impl_(std::make_unique<Impl>()) {
  if (batch <= 0) throw ContractError("GradEngine: batch must be positive");
  check_strategy_support(strategy, model.desc);
  impl_->desc = model.desc;
  impl_->strat = strategy;
  impl_->exec_mode = mode;
  impl_->B = batch;

  const auto t0 = std::chrono::steady_clock::now();
  impl_->main_exec = impl_->make_exec(impl_->main_tape());
  if (strategy == Strategy::norms) {
    impl_->weighted_exec =
        impl_->make_exec(grad(models::batched_loss_tape(model.desc, batch,
                                                        true)));
  }

  // Map "pex:<ordinal>" outputs back to parameter ordinals.
  const Tape& mt = impl_->main_exec->tape();
  for (const auto& [id, name] : mt.outputs) {
    impl_->output_bytes += numel(mt.nodes[id].shape) * sizeof(T);
    if (name.rfind("pex:", 0) == 0) {
      impl_->output_param.push_back(std::stoi(name.substr(4)));
    } else if (name.rfind("grad:", 0) == 0) {
      impl_->output_param.push_back(-1);  // positional, handled separately
    } else {
      impl_->output_param.push_back(-2);
    }
  }

  impl_->trace_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
}

template <typename T>
GradEngine<T>::~GradEngine() = default;
template <typename T>
GradEngine<T>::GradEngine(GradEngine&&) noexcept = default;

template <typename T>
PerExampleGrads<T> GradEngine<T>::compute(
    const Tensor<T>& x, const Tensor<T>& y,
    const std::vector<Tensor<T>>& params) {
  Impl& im = *impl_;
  const ModelDesc& desc = im.desc;
  if (x.dim(0) != im.B || y.dim(0) != im.B) {
    throw ContractError("GradEngine: batch extent mismatch (engine built for " +
                        std::to_string(im.B) + ")");
  }
  PerExampleGrads<T> out;
  out.batch = im.B;

  switch (im.strat) {
    case Strategy::naive: {
      for (size_t p = 0; p < desc.param_shapes.size(); ++p) {
        Shape s = desc.param_shapes[p];
        s.insert(s.begin(), im.B);
        out.stacks.push_back(Tensor<T>::uninit(s));
      }
      const int64_t xrow = numel(x.shape()) / im.B;
      for (int64_t i = 0; i < im.B; ++i) {
        Shape xs = x.shape();
        xs[0] = 1;
        Tensor<T> xi = Tensor<T>::from(
            xs, std::vector<T>(x.data() + i * xrow, x.data() + (i + 1) * xrow));
        Tensor<T> yi = Tensor<T>::from({1}, std::vector<T>{y.at(i)});
        auto grads = im.bind_run(im.main(true), xi, yi, params, nullptr);
        for (size_t p = 0; p < grads.size(); ++p) {
          std::memcpy(out.stacks[p].mutable_data() + i * grads[p].size(),
                      grads[p].data(), sizeof(T) * grads[p].size());
        }
      }
      break;
    }
    case Strategy::vmap: {
      out.stacks = im.bind_run(im.main(true), x, y, params, nullptr);
      break;
    }
    case Strategy::outer:
    case Strategy::groupconv:
    case Strategy::jacmm: {
      auto raw = im.bind_run(im.main(true), x, y, params, nullptr);
      out.stacks.resize(desc.param_shapes.size());
      for (size_t o = 0; o < raw.size(); ++o) {
        const int ordinal = im.output_param[o];
        if (ordinal >= 0) out.stacks[ordinal] = std::move(raw[o]);
      }
      break;
    }
    case Strategy::norms: {
      auto raw = im.bind_run(im.main(true), x, y, params, nullptr);
      // single "normsq" output alongside losses/logits
      Tensor<T> normsq;
      const Tape& mt = im.main_exec->tape();
      for (size_t o = 0; o < mt.outputs.size(); ++o) {
        if (mt.outputs[o].second == "normsq") normsq = raw[o];
      }
      out.norms_only = true;
      out.norms = Tensor<T>::uninit({im.B});
      for (int64_t i = 0; i < im.B; ++i) {
        out.norms.mutable_data()[i] =
            static_cast<T>(std::sqrt(static_cast<double>(normsq.at(i))));
      }
      break;
    }
  }
  return out;
}

template <typename T>
bool GradEngine<T>::supports_views() const {
  return impl_->exec_mode == ExecMode::graph &&
         impl_->strat != Strategy::naive && impl_->strat != Strategy::norms;
}

template <typename T>
std::vector<typename Executor<T>::ValueView> GradEngine<T>::compute_views(
    const Tensor<T>& x, const Tensor<T>& y,
    const std::vector<Tensor<T>>& params) {
  Impl& im = *impl_;
  if (!supports_views()) {
    throw ContractError("compute_views: graph-mode materializing strategies "
                        "only");
  }
  const Tape& t = im.main_exec->tape();
  std::vector<Tensor<T>> inputs;
  for (size_t i = 0; i < t.inputs.size(); ++i) {
    const Shape& want = t.nodes[t.inputs[i]].shape;
    inputs.push_back(t.input_names[i] == "x" ? x.reshaped(want)
                                             : y.reshaped(want));
  }
  auto raw = im.main_exec->run_views(params, inputs);
  if (im.strat == Strategy::vmap) return raw;
  std::vector<typename Executor<T>::ValueView> views(
      im.desc.param_shapes.size());
  for (size_t o = 0; o < raw.size(); ++o) {
    if (im.output_param[o] >= 0) views[im.output_param[o]] = std::move(raw[o]);
  }
  return views;
}

template <typename T>
std::vector<Tensor<T>> GradEngine<T>::weighted_grad_sum(
    const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& w,
    const std::vector<Tensor<T>>& params) {
  Impl& im = *impl_;
  if (!im.weighted_exec || im.exec_mode == ExecMode::eager) {
    Tape weighted = grad(models::batched_loss_tape(im.desc, im.B, true));
    im.weighted_exec = im.make_exec(weighted);
  }
  auto raw = im.bind_run(*im.weighted_exec, x, y, params, &w);
  // outputs: losses, logits, grad:<param>... in declaration order
  std::vector<Tensor<T>> grads;
  const Tape& t = im.weighted_exec->tape();
  for (size_t o = 0; o < t.outputs.size(); ++o) {
    if (t.outputs[o].second.rfind("grad:", 0) == 0) {
      grads.push_back(std::move(raw[o]));
    }
  }
  return grads;
}

template <typename T>
std::vector<Tensor<T>> GradEngine<T>::batch_grad_sum(
    const Tensor<T>& x, const Tensor<T>& y,
    const std::vector<Tensor<T>>& params) {
  Tensor<T> ones = Tensor<T>::full({impl_->B}, T(1));
  return weighted_grad_sum(x, y, ones, params);
}

template <typename T>
Strategy GradEngine<T>::strategy() const {
  return impl_->strat;
}
template <typename T>
ExecMode GradEngine<T>::mode() const {
  return impl_->exec_mode;
}
template <typename T>
int64_t GradEngine<T>::batch() const {
  return impl_->B;
}
template <typename T>
double GradEngine<T>::trace_seconds() const {
  return impl_->trace_seconds;
}

template <typename T>
const OptReport* GradEngine<T>::opt_report() const {
  const Graph* g = impl_->main_exec->graph();
  return g ? &g->report : nullptr;
}

template <typename T>
int64_t GradEngine<T>::footprint_bytes() const {
  const Impl& im = *impl_;
  int64_t bytes = im.main_exec->workspace_peak_bytes() + im.output_bytes;
  if (im.strat == Strategy::naive) {
    // the loop materializes the full stacks on the caller side
    int64_t stack_elems = 0;
    for (const Shape& s : im.desc.param_shapes) stack_elems += numel(s);
    bytes += im.B * stack_elems * static_cast<int64_t>(sizeof(T));
  }
  if (im.weighted_exec) bytes += im.weighted_exec->workspace_peak_bytes();
  return bytes;
}

namespace {

template <typename T>
PerExampleGrads<T> one_shot(Strategy s, const Model<T>& m, const Tensor<T>& x,
                            const Tensor<T>& y) {
  GradEngine<T> engine(m, s, x.dim(0), ExecMode::graph);
  return engine.compute(x, y, m.params);
}

}  // namespace

template <typename T>
PerExampleGrads<T> naive_loop(const Model<T>& m, const Tensor<T>& x,
                              const Tensor<T>& y) {
  if (x.dim(0) == 0) throw ContractError("naive_loop: empty batch");
  return one_shot(Strategy::naive, m, x, y);
}
template <typename T>
PerExampleGrads<T> vmap_strategy(const Model<T>& m, const Tensor<T>& x,
                                 const Tensor<T>& y) {
  return one_shot(Strategy::vmap, m, x, y);
}
template <typename T>
PerExampleGrads<T> outer_product_dense(const Model<T>& m, const Tensor<T>& x,
                                       const Tensor<T>& y) {
  return one_shot(Strategy::outer, m, x, y);
}
template <typename T>
PerExampleGrads<T> per_example_norms_dense(const Model<T>& m,
                                           const Tensor<T>& x,
                                           const Tensor<T>& y) {
  return one_shot(Strategy::norms, m, x, y);
}
template <typename T>
PerExampleGrads<T> grouped_conv_strategy(const Model<T>& m, const Tensor<T>& x,
                                         const Tensor<T>& y) {
  return one_shot(Strategy::groupconv, m, x, y);
}
template <typename T>
PerExampleGrads<T> jacobian_mm_strategy(const Model<T>& m, const Tensor<T>& x,
                                        const Tensor<T>& y) {
  return one_shot(Strategy::jacmm, m, x, y);
}
template <typename T>
PerExampleGrads<T> batched_per_example_grads(const Model<T>& m,
                                             const Tensor<T>& x,
                                             const Tensor<T>& y) {
  return vmap_strategy(m, x, y);
}

template <typename T>
Tensor<T> per_example_global_norms(const PerExampleGrads<T>& grads) {
  if (grads.norms_only) return grads.norms;
  Tensor<T> out = Tensor<T>::uninit({grads.batch});
  for (int64_t i = 0; i < grads.batch; ++i) {
    double acc = 0;
    for (const Tensor<T>& stack : grads.stacks) {
      const int64_t per = stack.size() / grads.batch;
      acc += detail::sumsq_lanes(stack.data() + i * per, per);
    }
    out.mutable_data()[i] = static_cast<T>(std::sqrt(acc));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> sum_over_examples(const PerExampleGrads<T>& grads) {
  if (grads.norms_only) {
    throw ContractError("sum_over_examples: norms-only gradients");
  }
  std::vector<Tensor<T>> out;
  for (const Tensor<T>& stack : grads.stacks) {
    const int64_t per = stack.size() / grads.batch;
    Shape s(stack.shape().begin() + 1, stack.shape().end());
    Tensor<T> acc = Tensor<T>::zeros(s);
    T* a = acc.mutable_data();
    for (int64_t i = 0; i < grads.batch; ++i) {
      const T* p = stack.data() + i * per;
      for (int64_t j = 0; j < per; ++j) a[j] += p[j];
    }
    out.push_back(std::move(acc));
  }
  return out;
}

#define PEGRAD_INSTANTIATE_STRATEGIES(T)                                       \
  template class GradEngine<T>;                                                \
  template PerExampleGrads<T> naive_loop<T>(const Model<T>&, const Tensor<T>&, \
                                            const Tensor<T>&);                 \
  template PerExampleGrads<T> vmap_strategy<T>(const Model<T>&,                \
                                               const Tensor<T>&,               \
                                               const Tensor<T>&);              \
  template PerExampleGrads<T> outer_product_dense<T>(                          \
      const Model<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template PerExampleGrads<T> per_example_norms_dense<T>(                      \
      const Model<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template PerExampleGrads<T> grouped_conv_strategy<T>(                        \
      const Model<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template PerExampleGrads<T> jacobian_mm_strategy<T>(                         \
      const Model<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template PerExampleGrads<T> batched_per_example_grads<T>(                    \
      const Model<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> per_example_global_norms<T>(const PerExampleGrads<T>&);   \
  template std::vector<Tensor<T>> sum_over_examples<T>(                        \
      const PerExampleGrads<T>&);

PEGRAD_INSTANTIATE_STRATEGIES(float)
PEGRAD_INSTANTIATE_STRATEGIES(double)

#undef PEGRAD_INSTANTIATE_STRATEGIES

}  // namespace pegrad
