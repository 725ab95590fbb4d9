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

#include "pegrad/dataset.hpp"
#include "pegrad/dpsgd.hpp"

namespace pegrad::bench {

struct OptimizerReport {
  int64_t removed_nodes = 0;
  int64_t fusion_groups = 0;
  int64_t peak_bytes = 0;  // planned arena bytes (graph mode)
  int64_t no_reuse_bytes = 0;
  double trace_seconds = 0;  // one-time record/optimize cost, not in epochs
  bool operator==(const OptimizerReport&) const = default;
};

// One benchmark measurement. Wall-clock per epoch covers the DPSGD steps
// only; tracing and optimization happen before timing starts and are
// reported separately in optimizer_report.trace_seconds.
struct BenchRecord {
  std::string model;
  std::string strategy;
  std::string mode;  // "eager" | "graph"
  bool vectorized = false;
  int64_t batch_size = 0;
  int64_t epochs = 0;
  double median_epoch_seconds = 0;
  std::vector<double> epoch_seconds;
  int64_t peak_planned_bytes = 0;  // engine memory model at this batch size
  OptimizerReport optimizer_report;
  uint64_t seed = 0;
  int64_t element_width = 0;
  std::string status = "ok";  // ok | skip | oom
  std::string reason;
  bool operator==(const BenchRecord&) const = default;
};

double median(std::vector<double> values);

struct RunOptions {
  std::vector<int64_t> batch_sizes{16, 32, 64, 128, 256};
  int64_t epochs = 20;
  ExecMode mode = ExecMode::graph;
  // -1 derives from the strategy (naive = loop, everything else vectorized);
  // explicit contradictions are configuration errors.
  int vectorize = -1;
  int64_t mem_cap_bytes = 0;  // 0 = unlimited
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
  double learning_rate = 0.1;
  int64_t microbatch = 1;
  uint64_t seed = 0;
};

bool resolve_vectorized(Strategy s, int vectorize_flag);

// The benchmark protocol: per batch size, run `epochs` training epochs and
// report the median epoch wall time. Unsupported (model, strategy) cells
// become skip records; infeasible-by-memory cells become OOM records; the
// sweep itself never aborts.
template <typename T>
std::vector<BenchRecord> run_bench(models::ModelKind kind,
                                   const io::Dataset<T>& data,
                                   Strategy strategy, const RunOptions& opts);

// Largest batch with footprint(B) <= cap, by doubling then binary search
// over the engine's deterministic memory model (no execution involved).
// Throws ConfigError when even B = 1 does not fit.
template <typename T>
int64_t max_batch_search(models::ModelKind kind, Strategy strategy,
                         ExecMode mode, int64_t mem_cap_bytes,
                         const models::ModelOptions& model_opts = {});

// Memory model of one training step at batch B (parameters, update buffer,
// one batch, executor workspaces, output stacks).
template <typename T>
int64_t step_footprint_bytes(models::ModelKind kind, Strategy strategy,
                             ExecMode mode, int64_t batch,
                             const models::ModelOptions& model_opts = {});

// JSON: array of records with snake_case keys; CSV: header plus one line per
// record, epoch list joined by ';'. Empty record sets are contract errors.
void emit_json(const std::vector<BenchRecord>& records,
               const std::string& path);
void emit_csv(const std::vector<BenchRecord>& records, const std::string& path);
std::string records_to_json(const std::vector<BenchRecord>& records);
std::vector<BenchRecord> records_from_json(const std::string& json_text);
std::vector<BenchRecord> parse_json_file(const std::string& path);

struct TrainResult {
  std::vector<double> epoch_mean_loss;  // over the evaluation slice
  double final_train_accuracy = 0;
  int64_t steps = 0;
};

// Deterministic training loop: seeded per-epoch shuffle, DPSGD steps (or
// plain SGD when private_training is false).
template <typename T>
TrainResult train(models::Model<T>& model, const io::Dataset<T>& data,
                  Strategy strategy, ExecMode mode, const DpConfig<T>& cfg,
                  int64_t batch, int64_t epochs, bool private_training);

}  // namespace pegrad::bench
