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

#include "pegrad/models.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad::io {

template <typename T>
struct Dataset {
  Tensor<T> inputs;  // (N, ...) real features or integral token ids
  Tensor<T> labels;  // (N)
  std::string name;
  int64_t count = 0;
  int64_t classes = 2;
};

// One array from an IDX container: big-endian magic (0x00000803 for ubyte
// rank-3 images, 0x00000801 for ubyte labels), big-endian dims, raw bytes.
// Malformed files raise FormatError naming the byte offset.
template <typename T>
Tensor<T> load_idx(const std::string& path);

// train-images-idx3-ubyte + train-labels-idx1-ubyte under `dir`; pixels
// scaled to [0,1], images shaped (N,1,28,28).
template <typename T>
Dataset<T> load_mnist(const std::string& dir, const std::string& prefix = "train");

enum class SynthKind { adult_like, tokens, cifar_like };

SynthKind synth_kind_from_name(const std::string& name);

// Deterministic synthetic stand-ins at the benchmark shapes:
//   adult_like  (n,104) gaussian features, binary labels from a planted
//               linear rule with a margin (separable by construction)
//   tokens      (n,256) ids in [0,10004), labels from a mean-id threshold
//   cifar_like  (n,3,32,32) gaussian images, labels uniform in [0,10)
template <typename T>
Dataset<T> synth(SynthKind kind, int64_t n, uint64_t seed);

// The synthetic dataset matching a model's input contract; token and image
// shapes follow the model description (test-scale models included).
template <typename T>
Dataset<T> synth_for_model(const models::ModelDesc& desc, int64_t n,
                           uint64_t seed);

template <typename T>
struct Batch {
  Tensor<T> x;
  Tensor<T> y;
};

template <typename T>
Batch<T> slice_batch(const Dataset<T>& data, int64_t start, int64_t count);

}  // namespace pegrad::io
