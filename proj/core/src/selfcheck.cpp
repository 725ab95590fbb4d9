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

#include "pegrad/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <sstream>

#include "pegrad/autodiff.hpp"
#include "pegrad/harness.hpp"
#include "pegrad/tensor_ops.hpp"

namespace pegrad::selfcheck {

using models::Model;
using models::ModelDesc;
using models::ModelKind;

namespace {

constexpr ModelKind kAllModels[] = {ModelKind::logreg,    ModelKind::fcnn,
                                    ModelKind::mnist_cnn, ModelKind::cifar_cnn,
                                    ModelKind::embed,     ModelKind::lstm};

double max_rel_err(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double x = a.at(i), y = b.at(i);
    const double scale = std::max({std::abs(x), std::abs(y), 1e-30});
    const double err = std::abs(x - y);
    // absolute agreement at tiny magnitudes counts as a match
    if (err < 1e-12) continue;
    worst = std::max(worst, err / scale);
  }
  return worst;
}

Model<double> model_for(ModelKind kind) {
  // Desk-scale sequence for the token models keeps the battery inside the
  // suite's runtime budget without touching vocabulary or widths.
  models::ModelOptions opts;
  if (kind == ModelKind::embed || kind == ModelKind::lstm) opts.seq_len = 32;
  return models::build<double>(kind, 1234 + static_cast<uint64_t>(kind), opts);
}

io::Dataset<double> data_for(const ModelDesc& desc, int64_t n) {
  return io::synth_for_model<double>(desc, n, 99);
}

CheckResult result(const std::string& name, bool pass,
                   const std::string& detail) {
  return {name, pass, detail};
}

std::vector<Tensor<double>> run_tape(const Tape& tape,
                                     const std::vector<Tensor<double>>& params,
                                     const std::vector<Tensor<double>>& inputs) {
  Executor<double> ex(std::make_shared<const Tape>(tape));
  return ex.run(params, inputs);
}

double eval_loss(const Tape& tape, const std::vector<Tensor<double>>& params,
                 const std::vector<Tensor<double>>& inputs) {
  Tape probe = tape;
  probe.outputs.clear();
  probe.outputs.emplace_back(probe.loss, "loss");
  return run_tape(probe, params, inputs)[0].at(0);
}

}  // namespace

std::vector<CheckResult> check_strategy_equivalence() {
  std::vector<CheckResult> out;
  for (ModelKind kind : kAllModels) {
    Model<double> model = model_for(kind);
    io::Dataset<double> data = data_for(model.desc, 4);
    for (int64_t B : {1, 2, 4}) {
      io::Batch<double> batch = io::slice_batch(data, 0, B);
      GradEngine<double> ref_engine(model, Strategy::naive, B,
                                    ExecMode::graph);
      PerExampleGrads<double> ref =
          ref_engine.compute(batch.x, batch.y, model.params);
      Tensor<double> ref_norms = per_example_global_norms(ref);
      for (Strategy s : all_strategies()) {
        if (s == Strategy::naive) continue;
        if (!strategy_supports(s, model.desc)) continue;
        std::ostringstream name;
        name << models::model_name(kind) << "/" << strategy_name(s)
             << "/B=" << B;
        GradEngine<double> engine(model, s, B, ExecMode::graph);
        PerExampleGrads<double> got =
            engine.compute(batch.x, batch.y, model.params);
        double worst = 0;
        if (got.norms_only) {
          worst = max_rel_err(got.norms, ref_norms);
        } else {
          for (size_t p = 0; p < ref.stacks.size(); ++p) {
            worst = std::max(worst,
                             max_rel_err(got.stacks[p], ref.stacks[p]));
          }
        }
        out.push_back(result(name.str(), worst <= 1e-8,
                             "max rel err " + std::to_string(worst)));
      }
    }
  }
  return out;
}

std::vector<CheckResult> check_gradient_oracle() {
  std::vector<CheckResult> out;

  // Per-primitive probes: loss = sum(weights * op(w)).
  struct Probe {
    const char* name;
    Shape wshape;
    double lo, hi;
    std::function<Var(TapeBuilder&, Var)> body;
  };
  const std::vector<Probe> probes = {
      {"add", {2, 3}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.add(w, tb.constant({3}, {0.3, -0.2, 0.7}));
       }},
      {"sub", {2, 2}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.sub(tb.constant({1}, {0.4}), w);
       }},
      {"mul", {2, 3}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.mul(w, tb.constant({2, 1}, {1.5, -0.5}));
       }},
      {"div", {2, 2}, 0.5, 1.5,
       [](TapeBuilder& tb, Var w) {
         return tb.div(tb.constant({2, 2}, {1, 2, 3, 4}), w);
       }},
      {"maximum", {5}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.maximum(w, tb.constant({5}, {0.1, -0.4, 0.2, 0.9, -0.9}));
       }},
      {"neg", {4}, -1, 1, [](TapeBuilder& tb, Var w) { return tb.neg(w); }},
      {"exp", {4}, -1, 1, [](TapeBuilder& tb, Var w) { return tb.exp(w); }},
      {"log", {4}, 0.2, 2, [](TapeBuilder& tb, Var w) { return tb.log(w); }},
      {"tanh", {4}, -1, 1, [](TapeBuilder& tb, Var w) { return tb.tanh(w); }},
      {"sigmoid", {4}, -1, 1,
       [](TapeBuilder& tb, Var w) { return tb.sigmoid(w); }},
      {"relu", {6}, -1, 1, [](TapeBuilder& tb, Var w) { return tb.relu(w); }},
      {"square", {4}, -1, 1,
       [](TapeBuilder& tb, Var w) { return tb.square(w); }},
      {"sqrt", {4}, 0.3, 2, [](TapeBuilder& tb, Var w) { return tb.sqrt(w); }},
      {"broadcast", {2, 1}, -1, 1,
       [](TapeBuilder& tb, Var w) { return tb.broadcast_to(w, {2, 4}); }},
      {"transpose", {2, 3}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.transpose(tb.reshape(w, {3, 2}), {1, 0});
       }},
      {"slice_pad", {2, 5}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.pad_axis(tb.slice_axis(w, 1, 1, 3), 1, 2, 7);
       }},
      {"matmul", {3, 4}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         std::vector<double> c(8);
         for (size_t i = 0; i < c.size(); ++i) c[i] = 0.1 * (i + 1);
         return tb.matmul(w, tb.constant({4, 2}, c));
       }},
      {"bmm", {2, 2, 3}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         std::vector<double> c(12);
         for (size_t i = 0; i < c.size(); ++i) c[i] = 0.1 * (i % 5) - 0.2;
         return tb.bmm(w, tb.constant({2, 3, 2}, c));
       }},
      {"reduce_sum", {3, 4}, -1, 1,
       [](TapeBuilder& tb, Var w) { return tb.reduce_sum(w, 1); }},
      {"reduce_max", {3, 4}, -1, 1,
       [](TapeBuilder& tb, Var w) { return tb.reduce_max(w, 1); }},
      {"im2col_col2im", {1, 8, 9}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.im2col(tb.col2im(w, 2, 4, 4, 2, 2, 1, 0), 2, 2, 1, 0);
       }},
      {"conv2d", {2, 1, 4, 4}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         std::vector<double> c(9);
         for (size_t i = 0; i < c.size(); ++i) c[i] = 0.2 * (i % 3) - 0.15;
         return tb.conv2d(w, tb.constant({1, 1, 3, 3}, c), 1, 1);
       }},
      {"pool", {1, 2, 4, 4}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.pool2d(TapeBuilder::PoolOp::max, w, 2, 2);
       }},
      {"gather", {5, 3}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.gather_rows(w, tb.constant({2, 3}, {0, 2, 4, 2, 1, 0}));
       }},
      {"scatter", {4, 2}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.scatter_add(w, tb.constant({4}, {1, 0, 1, 2}), 3);
       }},
      {"softmax_xent", {2, 3}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.softmax_xent(w, tb.constant({2}, {1, 2}), 3);
       }},
      {"softmax_xent_binary", {2, 1}, -1, 1,
       [](TapeBuilder& tb, Var w) {
         return tb.softmax_xent(w, tb.constant({2}, {1, 0}), 1);
       }},
  };

  for (const Probe& probe : probes) {
    Tape t = record([&](TapeBuilder& tb) {
      Var w = tb.param(probe.wshape, "w");
      Var y = probe.body(tb, w);
      std::vector<double> cw(numel(tb.shape_of(y)));
      RngState crng(17, 1);
      for (auto& v : cw) v = rng_uniform(crng, -1, 1);
      tb.mark_loss(tb.reduce_sum_all(tb.mul(y, tb.constant(tb.shape_of(y), cw))));
    });
    Tape g = grad(t);
    RngState rng(std::hash<std::string>{}(probe.name) & 0xffff, 0);
    Tensor<double> w = uniform<double>(probe.wshape, probe.lo, probe.hi, rng);
    Tensor<double> ad = run_tape(g, {w}, {})[0];
    double worst = 0;
    for (int64_t c = 0; c < ad.size(); ++c) {
      auto bump = [&](double delta) {
        Tensor<double> wb = Tensor<double>::uninit(w.shape());
        for (int64_t i = 0; i < w.size(); ++i) {
          wb.mutable_data()[i] = w.at(i) + (i == c ? delta : 0.0);
        }
        return eval_loss(t, {wb}, {});
      };
      const double h = 1e-4;
      const double fd = (bump(h) - bump(-h)) / (2 * h);
      const double scale = std::max({std::abs(ad.at(c)), std::abs(fd), 1.0});
      worst = std::max(worst, std::abs(ad.at(c) - fd) / scale);
    }
    out.push_back(result(std::string("vjp/") + probe.name, worst <= 1e-5,
                         "max rel err " + std::to_string(worst)));
  }

  // Full-model gradients vs central differences on 20 sampled coordinates.
  for (ModelKind kind : kAllModels) {
    Model<double> model = model_for(kind);
    io::Dataset<double> data = data_for(model.desc, 2);
    io::Batch<double> batch = io::slice_batch(data, 0, 2);
    Tape t = models::batched_loss_tape(model.desc, 2, false);
    Tape g = grad(t);
    auto grads = run_tape(g, model.params, {batch.x, batch.y});
    // outputs: losses, logits, then grads in parameter order
    const size_t grad_base = 2;
    RngState pick(31, static_cast<uint64_t>(kind));
    double worst = 0;
    int valid = 0, attempts = 0;
    while (valid < 20 && attempts < 200) {
      ++attempts;
      const size_t p = static_cast<size_t>(
          rng_uniform(pick, 0, static_cast<double>(model.params.size())));
      const int64_t c = static_cast<int64_t>(
          rng_uniform(pick, 0, static_cast<double>(model.params[p].size())));
      auto bump = [&](double delta) {
        std::vector<Tensor<double>> params = model.params;
        Tensor<double> wb = Tensor<double>::uninit(params[p].shape());
        for (int64_t i = 0; i < wb.size(); ++i) {
          wb.mutable_data()[i] = params[p].at(i) + (i == c ? delta : 0.0);
        }
        params[p] = wb;
        return eval_loss(t, params, {batch.x, batch.y});
      };
      const double h = 1e-4;
      const double fd = (bump(h) - bump(-h)) / (2 * h);
      // The difference quotient is only an oracle where it has converged;
      // a half-step disagreement marks a relu kink inside the stencil and
      // the coordinate is resampled.
      const double fd_half = (bump(h / 2) - bump(-h / 2)) / h;
      if (std::abs(fd - fd_half) > 1e-6 * std::max(1.0, std::abs(fd))) {
        continue;
      }
      const double ad = grads[grad_base + p].at(c);
      const double scale = std::max({std::abs(ad), std::abs(fd), 1.0});
      worst = std::max(worst, std::abs(ad - fd) / scale);
      ++valid;
    }
    out.push_back(result(std::string("model_grad/") + models::model_name(kind),
                         valid >= 20 && worst <= 1e-5,
                         "max rel err " + std::to_string(worst) + " over " +
                             std::to_string(valid) + " coords"));
  }
  return out;
}

std::vector<CheckResult> check_dpsgd_semantics() {
  std::vector<CheckResult> out;
  Model<double> model = models::build<double>(ModelKind::fcnn, 8);
  io::Dataset<double> data = io::synth_for_model<double>(model.desc, 8, 3);
  io::Batch<double> batch = io::slice_batch(data, 0, 8);

  // sigma = 0 equals clipped SGD exactly
  {
    Model<double> a = model, b = model;
    GradEngine<double> ea(a, Strategy::vmap, 8, ExecMode::graph);
    GradEngine<double> eb(b, Strategy::vmap, 8, ExecMode::graph);
    DpConfig<double> cfg;
    cfg.clip_norm = 0.5;
    cfg.noise_multiplier = 0;
    cfg.learning_rate = 0.4;
    dpsgd_step(a, ea, batch.x, batch.y, cfg, 0);

    PerExampleGrads<double> stacks = eb.compute(batch.x, batch.y, b.params);
    PerExampleGrads<double> clipped = clip(stacks, cfg.clip_norm);
    std::vector<Tensor<double>> mean =
        aggregate_noise(clipped, cfg, 0, nullptr);
    bool equal = true;
    for (size_t p = 0; p < b.params.size(); ++p) {
      for (int64_t j = 0; j < b.params[p].size(); ++j) {
        const double want =
            b.params[p].at(j) - cfg.learning_rate * mean[p].at(j);
        if (a.params[p].at(j) != want) equal = false;
      }
    }
    out.push_back(result("dpsgd/sigma0_exact", equal,
                         equal ? "bitwise equal" : "mismatch"));
  }

  // post-clip norms <= C(1+1e-12)
  {
    GradEngine<double> engine(model, Strategy::vmap, 8, ExecMode::graph);
    auto stacks = engine.compute(batch.x, batch.y, model.params);
    const double C = 0.05;
    auto clipped = clip(stacks, C);
    auto norms = per_example_global_norms(clipped);
    double worst = 0;
    for (int64_t i = 0; i < norms.size(); ++i) {
      worst = std::max(worst, norms.at(i));
    }
    out.push_back(result("dpsgd/post_clip_norm_bound",
                         worst <= C * (1 + 1e-12),
                         "max post-clip norm " + std::to_string(worst)));
  }

  // empirical noise variance within 2% of (sigma C / B)^2
  {
    PerExampleGrads<double> zero;
    zero.batch = 4;
    zero.stacks = {Tensor<double>::zeros({4, 1})};
    DpConfig<double> cfg;
    cfg.noise_multiplier = 1.5;
    cfg.clip_norm = 2.0;
    cfg.seed = 4321;
    const double want = std::pow(cfg.noise_multiplier * cfg.clip_norm / 4, 2);
    double sum = 0, sumsq = 0;
    const int64_t trials = 100000;
    for (int64_t t = 0; t < trials; ++t) {
      auto noisy = aggregate_noise(zero, cfg, t, nullptr);
      sum += noisy[0].at(0);
      sumsq += noisy[0].at(0) * noisy[0].at(0);
    }
    const double var = sumsq / trials - (sum / trials) * (sum / trials);
    out.push_back(result("dpsgd/noise_variance",
                         std::abs(var - want) < 0.02 * want,
                         "var " + std::to_string(var) + " want " +
                             std::to_string(want)));
  }

  // microbatch m=1 identity; m=B collapse
  {
    GradEngine<double> engine(model, Strategy::vmap, 8, ExecMode::graph);
    auto stacks = engine.compute(batch.x, batch.y, model.params);
    auto same = microbatch(stacks, 1);
    bool id_ok = true;
    for (size_t p = 0; p < stacks.stacks.size(); ++p) {
      if (!same.stacks[p].same_bits(stacks.stacks[p])) id_ok = false;
    }
    auto full = microbatch(stacks, 8);
    DpConfig<double> mean_cfg;
    mean_cfg.noise_multiplier = 0;
    auto mean = aggregate_noise(stacks, mean_cfg, 0, nullptr);
    double worst = 0;
    for (size_t p = 0; p < mean.size(); ++p) {
      for (int64_t j = 0; j < mean[p].size(); ++j) {
        worst = std::max(worst,
                         std::abs(full.stacks[p].at(j) - mean[p].at(j)));
      }
    }
    out.push_back(result("dpsgd/microbatch_reductions",
                         id_ok && worst <= 1e-15,
                         "m=1 identity and m=B mean, max diff " +
                             std::to_string(worst)));
  }
  return out;
}

std::vector<CheckResult> check_graph_soundness() {
  std::vector<CheckResult> out;
  for (ModelKind kind : kAllModels) {
    Model<double> model = model_for(kind);
    io::Dataset<double> data = data_for(model.desc, 2);
    io::Batch<double> batch = io::slice_batch(data, 0, 2);
    Tape g = grad(models::batched_loss_tape(model.desc, 2, false));
    auto eager = run_tape(g, model.params, {batch.x, batch.y});
    auto graph = optimize(g);
    Executor<double> gex(graph);
    auto opt = gex.run(model.params, {batch.x, batch.y});
    bool equal = eager.size() == opt.size();
    for (size_t i = 0; equal && i < eager.size(); ++i) {
      equal = eager[i].same_bits(opt[i]);
    }
    out.push_back(result(std::string("passes_preserve/") +
                             models::model_name(kind),
                         equal, equal ? "0 ulp" : "outputs differ"));

    // interval-overlap audit
    const BufferPlan& plan = graph->plan;
    bool audit = true;
    for (size_t a = 0; a < plan.node_buffer.size() && audit; ++a) {
      if (plan.node_buffer[a] < 0) continue;
      for (size_t b = a + 1; b < plan.node_buffer.size(); ++b) {
        if (plan.node_buffer[b] != plan.node_buffer[a]) continue;
        if (!(plan.last_use[a] < plan.def_step[b] ||
              plan.last_use[b] < plan.def_step[a])) {
          audit = false;
          break;
        }
      }
    }
    const bool monotone = plan.planned_peak_elems <= plan.no_reuse_elems;
    out.push_back(result(std::string("buffer_plan/") +
                             models::model_name(kind),
                         audit && monotone,
                         "planned " + std::to_string(plan.planned_peak_elems) +
                             " <= no-reuse " +
                             std::to_string(plan.no_reuse_elems)));
  }

  // MNIST CNN reuse ratio at batch 16 (regression bound)
  {
    auto desc = models::build_desc(ModelKind::mnist_cnn);
    auto graph = optimize(grad(models::batched_loss_tape(desc, 16, false)));
    const double ratio =
        static_cast<double>(graph->plan.planned_peak_elems) /
        static_cast<double>(graph->plan.no_reuse_elems);
    out.push_back(result("buffer_plan/mnist_cnn_ratio", ratio <= 0.7,
                         "planned/no-reuse = " + std::to_string(ratio)));
  }
  return out;
}

std::vector<CheckResult> check_memory_model() {
  std::vector<CheckResult> out;
  const int64_t cap = int64_t(24) << 20;
  const int64_t m1 = bench::max_batch_search<float>(
      ModelKind::fcnn, Strategy::vmap, ExecMode::graph, cap);
  const int64_t m2 = bench::max_batch_search<float>(
      ModelKind::fcnn, Strategy::vmap, ExecMode::graph, 2 * cap);
  out.push_back(result("memory/monotone_in_cap", m2 >= m1,
                       std::to_string(m1) + " -> " + std::to_string(m2)));
  const int64_t norms_max = bench::max_batch_search<float>(
      ModelKind::fcnn, Strategy::norms, ExecMode::graph, cap);
  out.push_back(result("memory/norms_geq_vmap", norms_max >= m1,
                       "norms " + std::to_string(norms_max) + " vs vmap " +
                           std::to_string(m1)));
  return out;
}

std::vector<CheckResult> check_support_matrix() {
  std::vector<CheckResult> out;
  struct Cell {
    ModelKind kind;
    Strategy strat;
    bool supported;
  };
  const std::vector<Cell> cells = {
      {ModelKind::embed, Strategy::groupconv, false},
      {ModelKind::embed, Strategy::outer, false},
      {ModelKind::embed, Strategy::norms, false},
      {ModelKind::embed, Strategy::jacmm, true},
      {ModelKind::lstm, Strategy::jacmm, false},
      {ModelKind::lstm, Strategy::groupconv, false},
      {ModelKind::lstm, Strategy::naive, true},
      {ModelKind::lstm, Strategy::vmap, true},
      {ModelKind::mnist_cnn, Strategy::outer, false},
      {ModelKind::mnist_cnn, Strategy::norms, false},
      {ModelKind::mnist_cnn, Strategy::groupconv, true},
      {ModelKind::cifar_cnn, Strategy::jacmm, true},
      {ModelKind::logreg, Strategy::norms, true},
      {ModelKind::fcnn, Strategy::outer, true},
  };
  for (const Cell& cell : cells) {
    auto desc = models::build_desc(cell.kind);
    const bool supported = strategy_supports(cell.strat, desc);
    bool typed_error_ok = true;
    if (!supported) {
      typed_error_ok = false;
      try {
        check_strategy_support(cell.strat, desc);
      } catch (const UnsupportedError& e) {
        typed_error_ok =
            std::string(e.what()).find("unsupported layer") !=
            std::string::npos;
      } catch (...) {
      }
    }
    std::ostringstream name;
    name << "support/" << models::model_name(cell.kind) << "/"
         << strategy_name(cell.strat);
    out.push_back(result(name.str(),
                         supported == cell.supported && typed_error_ok,
                         cell.supported ? "supported" : "typed rejection"));
  }
  return out;
}

std::vector<CheckResult> run_all() {
  std::vector<CheckResult> all;
  for (auto* fn : {check_strategy_equivalence, check_gradient_oracle,
                   check_dpsgd_semantics, check_graph_soundness,
                   check_memory_model, check_support_matrix}) {
    auto part = fn();
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace pegrad::selfcheck
