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

#include "pegrad/harness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <new>
#include <numeric>

#include "json.hpp"
#include "pegrad/tensor_ops.hpp"

namespace pegrad::bench {

using nlohmann::json;

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

bool resolve_vectorized(Strategy s, int vectorize_flag) {
  const bool natural = s != Strategy::naive;
  if (vectorize_flag < 0) return natural;
  const bool wanted = vectorize_flag > 0;
  if (wanted && !natural) {
    throw ConfigError(
        "the naive strategy is the per-example loop; --vectorize on "
        "contradicts it (use the vmap strategy)");
  }
  if (!wanted && natural) {
    throw ConfigError(std::string("strategy '") + strategy_name(s) +
                      "' is inherently vectorized; --vectorize off only "
                      "applies to the naive loop");
  }
  return natural;
}

namespace {

template <typename T>
DpConfig<T> to_dp_config(const RunOptions& opts) {
  DpConfig<T> cfg;
  cfg.clip_norm = static_cast<T>(opts.clip_norm);
  cfg.noise_multiplier = static_cast<T>(opts.noise_multiplier);
  cfg.learning_rate = static_cast<T>(opts.learning_rate);
  cfg.microbatch = opts.microbatch;
  cfg.seed = opts.seed;
  return cfg;
}

template <typename T>
int64_t model_bytes(const models::ModelDesc& desc) {
  return desc.param_count() * static_cast<int64_t>(sizeof(T));
}

template <typename T>
int64_t engine_step_footprint(const models::ModelDesc& desc,
                              const GradEngine<T>& engine, int64_t batch) {
  const int64_t input_elems = numel(desc.input_shape) * batch + batch;
  // parameters + aggregated update + the batch itself + pipeline workspace
  return 2 * model_bytes<T>(desc) +
         input_elems * static_cast<int64_t>(sizeof(T)) +
         engine.footprint_bytes();
}

}  // namespace

template <typename T>
std::vector<BenchRecord> run_bench(models::ModelKind kind,
                                   const io::Dataset<T>& data,
                                   Strategy strategy, const RunOptions& opts) {
  std::vector<BenchRecord> records;
  const bool vectorized = resolve_vectorized(strategy, opts.vectorize);
  const DpConfig<T> cfg = to_dp_config<T>(opts);

  for (int64_t B : opts.batch_sizes) {
    BenchRecord rec;
    rec.model = models::model_name(kind);
    rec.strategy = strategy_name(strategy);
    rec.mode = exec_mode_name(opts.mode);
    rec.vectorized = vectorized;
    rec.batch_size = B;
    rec.epochs = opts.epochs;
    rec.seed = opts.seed;
    rec.element_width = sizeof(T) * 8;

    auto model = models::build<T>(kind, opts.seed);
    if (!strategy_supports(strategy, model.desc)) {
      try {
        check_strategy_support(strategy, model.desc);
      } catch (const UnsupportedError& e) {
        rec.status = "skip";
        rec.reason = e.what();
      }
      records.push_back(std::move(rec));
      continue;
    }
    if (B > data.count) {
      rec.status = "skip";
      rec.reason = "batch larger than the dataset";
      records.push_back(std::move(rec));
      continue;
    }

    try {
      GradEngine<T> engine(model, strategy, B, opts.mode);
      rec.peak_planned_bytes = engine_step_footprint(model.desc, engine, B);
      if (opts.mem_cap_bytes > 0 &&
          rec.peak_planned_bytes > opts.mem_cap_bytes) {
        rec.status = "oom";
        rec.reason = "footprint " + std::to_string(rec.peak_planned_bytes) +
                     " bytes exceeds cap " +
                     std::to_string(opts.mem_cap_bytes);
        records.push_back(std::move(rec));
        continue;
      }
      rec.optimizer_report.trace_seconds = engine.trace_seconds();
      if (const OptReport* opt = engine.opt_report()) {
        rec.optimizer_report.removed_nodes = opt->removed_nodes;
        rec.optimizer_report.fusion_groups = opt->fusion_groups;
        rec.optimizer_report.peak_bytes =
            opt->planned_peak_elems * static_cast<int64_t>(sizeof(T));
        rec.optimizer_report.no_reuse_bytes =
            opt->no_reuse_elems * static_cast<int64_t>(sizeof(T));
      }

      const int64_t steps = data.count / B;
      for (int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int64_t s = 0; s < steps; ++s) {
          io::Batch<T> batch = io::slice_batch(data, s * B, B);
          dpsgd_step(model, engine, batch.x, batch.y, cfg,
                     epoch * steps + s);
        }
        rec.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count());
      }
      rec.median_epoch_seconds = median(rec.epoch_seconds);
    } catch (const std::bad_alloc&) {
      rec.status = "oom";
      rec.reason = "allocation failed";
      rec.epoch_seconds.clear();
      rec.median_epoch_seconds = 0;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

template <typename T>
int64_t step_footprint_bytes(models::ModelKind kind, Strategy strategy,
                             ExecMode mode, int64_t batch,
                             const models::ModelOptions& model_opts) {
  auto desc = models::build_desc(kind, model_opts);
  check_strategy_support(strategy, desc);
  auto model = models::build<T>(kind, 0, model_opts);
  GradEngine<T> engine(model, strategy, batch, mode);
  return engine_step_footprint(desc, engine, batch);
}

template <typename T>
int64_t max_batch_search(models::ModelKind kind, Strategy strategy,
                         ExecMode mode, int64_t mem_cap_bytes,
                         const models::ModelOptions& model_opts) {
  auto feasible = [&](int64_t B) {
    return step_footprint_bytes<T>(kind, strategy, mode, B, model_opts) <=
           mem_cap_bytes;
  };
  if (!feasible(1)) {
    throw ConfigError("max_batch_search: batch size 1 already exceeds the cap");
  }
  int64_t lo = 1, hi = 2;
  while (feasible(hi)) {
    lo = hi;
    hi *= 2;
    if (hi > (int64_t(1) << 24)) return lo;  // cap the probe
  }
  // invariant: lo feasible, hi infeasible
  while (hi - lo > 1) {
    const int64_t mid = lo + (hi - lo) / 2;
    if (feasible(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

namespace {

json report_to_json(const OptimizerReport& r) {
  return json{{"removed_nodes", r.removed_nodes},
              {"fusion_groups", r.fusion_groups},
              {"peak_bytes", r.peak_bytes},
              {"no_reuse_bytes", r.no_reuse_bytes},
              {"trace_seconds", r.trace_seconds}};
}

json record_to_json(const BenchRecord& r) {
  return json{{"model", r.model},
              {"strategy", r.strategy},
              {"mode", r.mode},
              {"vectorized", r.vectorized},
              {"batch_size", r.batch_size},
              {"epochs", r.epochs},
              {"median_epoch_seconds", r.median_epoch_seconds},
              {"epoch_seconds", r.epoch_seconds},
              {"peak_planned_bytes", r.peak_planned_bytes},
              {"optimizer_report", report_to_json(r.optimizer_report)},
              {"seed", r.seed},
              {"element_width", r.element_width},
              {"status", r.status},
              {"reason", r.reason}};
}

BenchRecord record_from_json(const json& j) {
  BenchRecord r;
  r.model = j.at("model").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.vectorized = j.at("vectorized").get<bool>();
  r.batch_size = j.at("batch_size").get<int64_t>();
  r.epochs = j.at("epochs").get<int64_t>();
  r.median_epoch_seconds = j.at("median_epoch_seconds").get<double>();
  r.epoch_seconds = j.at("epoch_seconds").get<std::vector<double>>();
  r.peak_planned_bytes = j.at("peak_planned_bytes").get<int64_t>();
  const json& o = j.at("optimizer_report");
  r.optimizer_report.removed_nodes = o.at("removed_nodes").get<int64_t>();
  r.optimizer_report.fusion_groups = o.at("fusion_groups").get<int64_t>();
  r.optimizer_report.peak_bytes = o.at("peak_bytes").get<int64_t>();
  r.optimizer_report.no_reuse_bytes = o.at("no_reuse_bytes").get<int64_t>();
  r.optimizer_report.trace_seconds = o.at("trace_seconds").get<double>();
  r.seed = j.at("seed").get<uint64_t>();
  r.element_width = j.at("element_width").get<int64_t>();
  r.status = j.at("status").get<std::string>();
  r.reason = j.at("reason").get<std::string>();
  return r;
}

}  // namespace

std::string records_to_json(const std::vector<BenchRecord>& records) {
  if (records.empty()) throw ContractError("emit: no records");
  json arr = json::array();
  for (const BenchRecord& r : records) arr.push_back(record_to_json(r));
  return arr.dump(2);
}

std::vector<BenchRecord> records_from_json(const std::string& text) {
  json arr = json::parse(text);
  std::vector<BenchRecord> out;
  for (const json& j : arr) out.push_back(record_from_json(j));
  return out;
}

void emit_json(const std::vector<BenchRecord>& records,
               const std::string& path) {
  const std::string text = records_to_json(records);
  std::ofstream out(path);
  if (!out) throw IoError("emit_json: cannot write '" + path + "'");
  out << text << '\n';
}

std::vector<BenchRecord> parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_json_file: cannot read '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return records_from_json(text);
}

void emit_csv(const std::vector<BenchRecord>& records,
              const std::string& path) {
  if (records.empty()) throw ContractError("emit: no records");
  std::ofstream out(path);
  if (!out) throw IoError("emit_csv: cannot write '" + path + "'");
  out << "model,strategy,mode,vectorized,batch_size,epochs,"
         "median_epoch_seconds,epoch_seconds,peak_planned_bytes,"
         "removed_nodes,fusion_groups,opt_peak_bytes,no_reuse_bytes,"
         "trace_seconds,seed,element_width,status,reason\n";
  for (const BenchRecord& r : records) {
    out << r.model << ',' << r.strategy << ',' << r.mode << ','
        << (r.vectorized ? "true" : "false") << ',' << r.batch_size << ','
        << r.epochs << ',' << r.median_epoch_seconds << ',';
    for (size_t i = 0; i < r.epoch_seconds.size(); ++i) {
      if (i) out << ';';
      out << r.epoch_seconds[i];
    }
    out << ',' << r.peak_planned_bytes << ','
        << r.optimizer_report.removed_nodes << ','
        << r.optimizer_report.fusion_groups << ','
        << r.optimizer_report.peak_bytes << ','
        << r.optimizer_report.no_reuse_bytes << ','
        << r.optimizer_report.trace_seconds << ',' << r.seed << ','
        << r.element_width << ',' << r.status << ',' << r.reason << '\n';
  }
}

template <typename T>
TrainResult train(models::Model<T>& model, const io::Dataset<T>& data,
                  Strategy strategy, ExecMode mode, const DpConfig<T>& cfg,
                  int64_t batch, int64_t epochs, bool private_training) {
  if (batch <= 0 || batch > data.count) {
    throw ConfigError("train: bad batch size");
  }
  GradEngine<T> engine(model, strategy, batch, mode);
  TrainResult result;
  const int64_t steps = data.count / batch;
  const int64_t eval_n = std::min<int64_t>(data.count, 1024);
  io::Batch<T> eval = io::slice_batch(data, 0, eval_n);

  std::vector<int64_t> order(data.count);
  std::iota(order.begin(), order.end(), 0);
  const int64_t row = numel(data.inputs.shape()) / data.count;

  for (int64_t epoch = 0; epoch < epochs; ++epoch) {
    // deterministic per-epoch shuffle
    RngState shuffle_rng(cfg.seed, (uint64_t(1) << 40) + epoch);
    for (int64_t i = data.count - 1; i > 0; --i) {
      const int64_t j =
          static_cast<int64_t>(rng_uniform(shuffle_rng, 0, i + 1));
      std::swap(order[i], order[j]);
    }
    for (int64_t s = 0; s < steps; ++s) {
      Shape xs = data.inputs.shape();
      xs[0] = batch;
      Tensor<T> x = Tensor<T>::uninit(xs);
      Tensor<T> y = Tensor<T>::uninit({batch});
      for (int64_t i = 0; i < batch; ++i) {
        const int64_t src = order[s * batch + i];
        std::copy(data.inputs.data() + src * row,
                  data.inputs.data() + (src + 1) * row,
                  x.mutable_data() + i * row);
        y.mutable_data()[i] = data.labels.at(src);
      }
      if (private_training) {
        dpsgd_step(model, engine, x, y, cfg, epoch * steps + s);
      } else {
        sgd_step(model, engine, x, y, cfg.learning_rate);
      }
      ++result.steps;
    }
    auto [total, per] = models::loss(model, eval.x, eval.y);
    result.epoch_mean_loss.push_back(static_cast<double>(total) /
                                     static_cast<double>(eval_n));
  }

  // final train accuracy over the whole set
  int64_t correct = 0;
  const int64_t chunk = 512;
  for (int64_t start = 0; start < data.count; start += chunk) {
    const int64_t n = std::min<int64_t>(chunk, data.count - start);
    io::Batch<T> b = io::slice_batch(data, start, n);
    auto pred = models::predict(model, b.x);
    for (int64_t i = 0; i < n; ++i) {
      if (pred[i] == static_cast<int64_t>(b.y.at(i))) ++correct;
    }
  }
  result.final_train_accuracy =
      static_cast<double>(correct) / static_cast<double>(data.count);
  return result;
}

#define PEGRAD_INSTANTIATE_BENCH(T)                                          \
  template std::vector<BenchRecord> run_bench<T>(                            \
      models::ModelKind, const io::Dataset<T>&, Strategy, const RunOptions&); \
  template int64_t max_batch_search<T>(models::ModelKind, Strategy, ExecMode, \
                                       int64_t, const models::ModelOptions&); \
  template int64_t step_footprint_bytes<T>(models::ModelKind, Strategy,      \
                                           ExecMode, int64_t,                \
                                           const models::ModelOptions&);     \
  template TrainResult train<T>(models::Model<T>&, const io::Dataset<T>&,    \
                                Strategy, ExecMode, const DpConfig<T>&,      \
                                int64_t, int64_t, bool);

PEGRAD_INSTANTIATE_BENCH(float)
PEGRAD_INSTANTIATE_BENCH(double)

#undef PEGRAD_INSTANTIATE_BENCH

}  // namespace pegrad::bench
