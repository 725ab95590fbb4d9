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

#include <string>

#include "pegrad/tape.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad::models {

enum class ModelKind { logreg, fcnn, mnist_cnn, cifar_cnn, embed, lstm };

const char* model_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

enum class LayerKind {
  dense,
  conv,
  maxpool,
  avgpool,
  global_avgpool,
  flatten,
  relu,
  embedding,
  seq_avgpool,
  lstm,
};

struct LayerSpec {
  LayerKind kind;
  int64_t in = 0;      // features / channels / vocab / embed dim
  int64_t out = 0;     // features / channels / embed dim / hidden
  int64_t k = 0;       // filter or window extent
  int64_t stride = 1;
  int64_t pad = 0;
};

// Width/size overrides for tests; -1 keeps the benchmark architecture value.
struct ModelOptions {
  int64_t seq_len = -1;
  int64_t vocab = -1;
  int64_t hidden = -1;
};

struct ModelDesc {
  ModelKind kind;
  std::vector<LayerSpec> layers;
  Shape input_shape;  // per example, no batch axis
  int64_t classes = 2;  // 1 selects the binary sigmoid head
  bool token_input = false;
  std::vector<std::string> param_names;
  std::vector<Shape> param_shapes;
  std::vector<int64_t> param_fan_in;  // inputs feeding one output unit

  int64_t param_count() const {
    int64_t n = 0;
    for (const Shape& s : param_shapes) n += numel(s);
    return n;
  }
};

ModelDesc build_desc(ModelKind kind, const ModelOptions& opts = {});

template <typename T>
struct Model {
  ModelDesc desc;
  std::vector<Tensor<T>> params;
};

// Fan-in scaled uniform weights, zero biases, one rng stream per parameter.
template <typename T>
Model<T> build(ModelKind kind, uint64_t seed, const ModelOptions& opts = {});

template <typename T>
Model<T> build_from_desc(const ModelDesc& desc, uint64_t seed);

// Where a parameterized layer's values sit in a traced tape, for the
// per-example gradient strategies.
struct LayerTap {
  int layer = -1;
  LayerKind kind = LayerKind::dense;
  int32_t input = -1;       // activation entering the layer
  int32_t linear_out = -1;  // post-bias linear output
  int32_t patches = -1;     // conv im2col columns
  int32_t ids = -1;         // embedding ids
  int param_w = -1;         // parameter ordinals in desc order
  int param_b = -1;
};

// Traces the forward pass for the batch extent implied by x's leading axis;
// params must be declared in desc order. Returns the logits var.
Var trace_forward(TapeBuilder& tb, const ModelDesc& desc, Var x,
                  const std::vector<Var>& params,
                  std::vector<LayerTap>* taps = nullptr);

// Tape computing one example's scalar loss; inputs "x" (1,...) and "y" (1).
Tape per_example_loss_tape(const ModelDesc& desc);

// Batched tape: inputs "x" (B,...), "y" (B), and optionally loss weights
// "w" (B); loss = sum_i w_i * loss_i. Marks "losses" and "logits" outputs.
Tape batched_loss_tape(const ModelDesc& desc, int64_t batch, bool weighted,
                       std::vector<LayerTap>* taps = nullptr);

// One step of the standard LSTM recurrence (sigmoid input/forget/output
// gates, tanh candidate) from matmul/elementwise primitives. Gate blocks
// are packed [i, f, g, o] along the leading axis of wx/wh/b.
struct LstmState {
  Var h, c;
};
LstmState lstm_cell(TapeBuilder& tb, Var x_t, Var h, Var c, Var wx, Var wh,
                    Var b);

// Eager twin of lstm_cell for scan-style dynamic execution.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell_eager(const Tensor<T>& x_t,
                                                const Tensor<T>& h,
                                                const Tensor<T>& c,
                                                const Tensor<T>& wx,
                                                const Tensor<T>& wh,
                                                const Tensor<T>& b);

// Dynamic (scan-style) forward for the lstm model: eager loop over time
// steps; returns logits. The unrolled static tape must match this.
template <typename T>
Tensor<T> lstm_forward_scan(const Model<T>& model, const Tensor<T>& ids);

// Sum of per-example losses plus the per-example vector.
template <typename T>
std::pair<T, Tensor<T>> loss(const Model<T>& model, const Tensor<T>& x,
                             const Tensor<T>& labels);

template <typename T>
Tensor<T> forward_logits(const Model<T>& model, const Tensor<T>& x);

// Predicted class per example (binary head: logit > 0).
template <typename T>
std::vector<int64_t> predict(const Model<T>& model, const Tensor<T>& x);

}  // namespace pegrad::models
