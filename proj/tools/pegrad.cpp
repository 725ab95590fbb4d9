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

// pegrad CLI: bench (the batch-size sweep protocol), verify (the
// equivalence/oracle battery), maxbatch (largest batch under a byte cap),
// and train (accuracy sanity runs).

#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "pegrad/harness.hpp"
#include "pegrad/selfcheck.hpp"

namespace {

using namespace pegrad;

int element_width_from_env() {
  const char* env = std::getenv("PEGRAD_ELEMENT_WIDTH");
  if (!env) return 32;
  const std::string v(env);
  if (v == "32") return 32;
  if (v == "64") return 64;
  throw ConfigError("PEGRAD_ELEMENT_WIDTH must be 32 or 64, got '" + v + "'");
}

struct BenchArgs {
  std::string model = "fcnn";
  std::string strategy = "vmap";
  std::string mode = "graph";
  std::string vectorize = "auto";
  std::vector<int64_t> batch_sizes{16, 32, 64, 128, 256};
  int64_t epochs = 20;
  double clip = 1.0;
  double noise_multiplier = 1.0;
  double lr = 0.1;
  int64_t microbatch = 1;
  uint64_t seed = 0;
  int64_t dataset_size = 4096;
  std::string data_dir;
  int64_t mem_cap = 0;
  std::string out = "results.json";
  std::string format = "json";
};

bench::RunOptions to_run_options(const BenchArgs& args) {
  bench::RunOptions opts;
  opts.batch_sizes = args.batch_sizes;
  opts.epochs = args.epochs;
  opts.mode = args.mode == "eager" ? ExecMode::eager : ExecMode::graph;
  if (args.vectorize == "auto") {
    opts.vectorize = -1;
  } else if (args.vectorize == "on") {
    opts.vectorize = 1;
  } else if (args.vectorize == "off") {
    opts.vectorize = 0;
  } else {
    throw ConfigError("--vectorize must be on, off or auto");
  }
  opts.mem_cap_bytes = args.mem_cap;
  opts.clip_norm = args.clip;
  opts.noise_multiplier = args.noise_multiplier;
  opts.learning_rate = args.lr;
  opts.microbatch = args.microbatch;
  opts.seed = args.seed;
  return opts;
}

template <typename T>
io::Dataset<T> dataset_for(const BenchArgs& args, const models::ModelDesc& desc) {
  if (!args.data_dir.empty()) {
    if (desc.kind != models::ModelKind::mnist_cnn) {
      throw ConfigError("--data currently loads MNIST IDX files and applies "
                        "to --model mnist_cnn only");
    }
    return io::load_mnist<T>(args.data_dir);
  }
  return io::synth_for_model<T>(desc, args.dataset_size, args.seed);
}

template <typename T>
int run_bench_cmd(const BenchArgs& args) {
  const auto kind = models::model_kind_from_name(args.model);
  const Strategy strategy = strategy_from_name(args.strategy);
  const auto desc = models::build_desc(kind);
  io::Dataset<T> data = dataset_for<T>(args, desc);
  bench::RunOptions opts = to_run_options(args);

  auto records = bench::run_bench<T>(kind, data, strategy, opts);
  for (const auto& r : records) {
    if (r.status == "ok") {
      std::printf("%-10s %-9s %-5s B=%-4lld median %.6fs (trace %.3fs)\n",
                  r.model.c_str(), r.strategy.c_str(), r.mode.c_str(),
                  static_cast<long long>(r.batch_size),
                  r.median_epoch_seconds,
                  r.optimizer_report.trace_seconds);
    } else {
      std::printf("%-10s %-9s %-5s B=%-4lld %s: %s\n", r.model.c_str(),
                  r.strategy.c_str(), r.mode.c_str(),
                  static_cast<long long>(r.batch_size), r.status.c_str(),
                  r.reason.c_str());
    }
  }
  if (args.format == "json") {
    bench::emit_json(records, args.out);
  } else if (args.format == "csv") {
    bench::emit_csv(records, args.out);
  } else {
    throw ConfigError("--format must be json or csv");
  }
  std::printf("wrote %zu records to %s\n", records.size(), args.out.c_str());
  return 0;
}

int run_verify_cmd() {
  auto results = selfcheck::run_all();
  int failed = 0;
  for (const auto& r : results) {
    std::printf("[%s] %s — %s\n", r.pass ? "pass" : "FAIL", r.name.c_str(),
                r.detail.c_str());
    if (!r.pass) ++failed;
  }
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}

template <typename T>
int run_maxbatch_cmd(const std::string& model, const std::string& strategy,
                     const std::string& mode, int64_t mem_cap) {
  const auto kind = models::model_kind_from_name(model);
  const Strategy strat = strategy_from_name(strategy);
  const ExecMode exec = mode == "eager" ? ExecMode::eager : ExecMode::graph;
  const int64_t best =
      bench::max_batch_search<T>(kind, strat, exec, mem_cap);
  std::printf("%s/%s/%s: max batch %lld under %lld bytes\n", model.c_str(),
              strategy.c_str(), mode.c_str(), static_cast<long long>(best),
              static_cast<long long>(mem_cap));
  return 0;
}

template <typename T>
int run_train_cmd(const BenchArgs& args, int64_t batch, bool no_privacy) {
  const auto kind = models::model_kind_from_name(args.model);
  const Strategy strategy = strategy_from_name(args.strategy);
  auto model = models::build<T>(kind, args.seed);
  io::Dataset<T> data = dataset_for<T>(args, model.desc);

  DpConfig<T> cfg;
  cfg.clip_norm = static_cast<T>(args.clip);
  cfg.noise_multiplier = static_cast<T>(args.noise_multiplier);
  cfg.learning_rate = static_cast<T>(args.lr);
  cfg.microbatch = args.microbatch;
  cfg.seed = args.seed;

  const ExecMode mode =
      args.mode == "eager" ? ExecMode::eager : ExecMode::graph;
  auto result = bench::train(model, data, strategy, mode, cfg, batch,
                             args.epochs, !no_privacy);
  for (size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
    std::printf("epoch %2zu  mean loss %.6f\n", e + 1,
                result.epoch_mean_loss[e]);
  }
  std::printf("final train accuracy: %.4f (%s, %lld steps)\n",
              result.final_train_accuracy,
              no_privacy ? "plain SGD" : "DPSGD",
              static_cast<long long>(result.steps));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"per-example gradient engine and DPSGD benchmark harness"};
  app.require_subcommand(1);

  BenchArgs args;
  int64_t train_batch = 64;
  bool no_privacy = false;
  int64_t maxbatch_cap = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--model", args.model,
                    "logreg|fcnn|mnist_cnn|cifar_cnn|embed|lstm");
    cmd->add_option("--strategy", args.strategy,
                    "naive|vmap|outer|norms|groupconv|jacmm");
    cmd->add_option("--mode", args.mode, "eager|graph");
    cmd->add_option("--clip", args.clip, "clipping norm C");
    cmd->add_option("--noise-multiplier", args.noise_multiplier,
                    "noise multiplier sigma");
    cmd->add_option("--lr", args.lr, "learning rate");
    cmd->add_option("--microbatch", args.microbatch,
                    "examples averaged before clipping");
    cmd->add_option("--seed", args.seed, "seed for data, init and noise");
    cmd->add_option("--dataset-size", args.dataset_size,
                    "synthetic dataset size");
    cmd->add_option("--data", args.data_dir, "MNIST IDX directory");
    cmd->add_option("--epochs", args.epochs, "training epochs");
  };

  CLI::App* bench_cmd =
      app.add_subcommand("bench", "batch-size sweep, median epoch seconds");
  add_common(bench_cmd);
  bench_cmd->add_option("--vectorize", args.vectorize, "on|off|auto");
  bench_cmd->add_option("--batch-sizes", args.batch_sizes,
                        "comma-separated batch sizes")
      ->delimiter(',');
  bench_cmd->add_option("--mem-cap", args.mem_cap,
                        "byte cap; larger configurations become OOM records");
  bench_cmd->add_option("--out", args.out, "output path");
  bench_cmd->add_option("--format", args.format, "json|csv");

  CLI::App* verify_cmd = app.add_subcommand(
      "verify", "run the full equivalence/oracle suite (64-bit)");

  CLI::App* maxbatch_cmd = app.add_subcommand(
      "maxbatch", "largest feasible batch size under a byte cap");
  maxbatch_cmd->add_option("--model", args.model, "model kind");
  maxbatch_cmd->add_option("--strategy", args.strategy, "strategy");
  maxbatch_cmd->add_option("--mode", args.mode, "eager|graph");
  maxbatch_cmd->add_option("--mem-cap", maxbatch_cap, "cap in bytes")
      ->required();

  CLI::App* train_cmd =
      app.add_subcommand("train", "train and report final train accuracy");
  add_common(train_cmd);
  train_cmd->add_option("--batch-size", train_batch, "minibatch size");
  train_cmd->add_flag("--no-privacy", no_privacy,
                      "plain SGD instead of DPSGD");

  CLI11_PARSE(app, argc, argv);

  try {
    const int width = element_width_from_env();
    if (bench_cmd->parsed()) {
      return width == 64 ? run_bench_cmd<double>(args)
                         : run_bench_cmd<float>(args);
    }
    if (verify_cmd->parsed()) {
      return run_verify_cmd();
    }
    if (maxbatch_cmd->parsed()) {
      return width == 64
                 ? run_maxbatch_cmd<double>(args.model, args.strategy,
                                            args.mode, maxbatch_cap)
                 : run_maxbatch_cmd<float>(args.model, args.strategy,
                                           args.mode, maxbatch_cap);
    }
    if (train_cmd->parsed()) {
      return width == 64 ? run_train_cmd<double>(args, train_batch, no_privacy)
                         : run_train_cmd<float>(args, train_batch, no_privacy);
    }
  } catch (const pegrad::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
