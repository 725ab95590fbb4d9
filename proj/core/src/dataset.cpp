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

#include "pegrad/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "pegrad/rng.hpp"
#include "pegrad/tensor_ops.hpp"

namespace pegrad::io {

namespace {

uint32_t read_be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

}  // namespace

template <typename T>
Tensor<T> load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_idx: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 4) {
    throw FormatError("load_idx: '" + path + "' truncated at offset 0 (" +
                      std::to_string(bytes.size()) + " bytes)");
  }
  const uint32_t magic = read_be32(bytes.data());
  if ((magic >> 16) != 0 || ((magic >> 8) & 0xff) != 0x08) {
    throw FormatError("load_idx: bad magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%08x", magic);
      return std::string(buf);
    }() + " at offset 0 (expected an unsigned-byte IDX array)");
  }
  const uint32_t ndim = magic & 0xff;
  if (ndim < 1 || ndim > 4) {
    throw FormatError("load_idx: unsupported rank " + std::to_string(ndim) +
                      " at offset 3");
  }
  size_t offset = 4;
  Shape dims;
  int64_t total = 1;
  for (uint32_t d = 0; d < ndim; ++d) {
    if (bytes.size() < offset + 4) {
      throw FormatError("load_idx: truncated dims at offset " +
                        std::to_string(offset));
    }
    const int64_t extent = read_be32(bytes.data() + offset);
    dims.push_back(extent);
    total *= extent;
    offset += 4;
  }
  if (bytes.size() != offset + static_cast<size_t>(total)) {
    throw FormatError("load_idx: payload size mismatch at offset " +
                      std::to_string(offset) + " (want " +
                      std::to_string(total) + " bytes, have " +
                      std::to_string(bytes.size() - offset) + ")");
  }
  Tensor<T> out = Tensor<T>::uninit(dims);
  T* p = out.mutable_data();
  for (int64_t i = 0; i < total; ++i) {
    p[i] = static_cast<T>(bytes[offset + i]);
  }
  return out;
}

template <typename T>
Dataset<T> load_mnist(const std::string& dir, const std::string& prefix) {
  Tensor<T> images =
      load_idx<T>(dir + "/" + prefix + "-images-idx3-ubyte");
  Tensor<T> labels =
      load_idx<T>(dir + "/" + prefix + "-labels-idx1-ubyte");
  if (images.rank() != 3) {
    throw FormatError("load_mnist: expected rank-3 image array, got " +
                      shape_str(images.shape()));
  }
  const int64_t n = images.dim(0);
  if (labels.rank() != 1 || labels.dim(0) != n) {
    throw FormatError("load_mnist: image/label count mismatch");
  }
  Tensor<T> scaled = Tensor<T>::uninit({n, 1, images.dim(1), images.dim(2)});
  const T* src = images.data();
  T* dst = scaled.mutable_data();
  for (int64_t i = 0; i < images.size(); ++i) {
    dst[i] = src[i] / T(255);
  }
  Dataset<T> d;
  d.inputs = std::move(scaled);
  d.labels = std::move(labels);
  d.name = "mnist-" + prefix;
  d.count = n;
  d.classes = 10;
  return d;
}

SynthKind synth_kind_from_name(const std::string& name) {
  if (name == "adult_like") return SynthKind::adult_like;
  if (name == "tokens") return SynthKind::tokens;
  if (name == "cifar_like") return SynthKind::cifar_like;
  throw ConfigError("unknown synthetic dataset '" + name + "'");
}

namespace {

// Binary labels from a planted linear rule; examples too close to the
// decision boundary are redrawn so the construction is separable with a
// margin.
template <typename T>
Dataset<T> synth_adult(int64_t n, uint64_t seed, int64_t features) {
  RngState wrng(seed, 1);
  std::vector<double> w(features);
  for (auto& v : w) v = rng_uniform(wrng, -1, 1);
  double wnorm = 0;
  for (double v : w) wnorm += v * v;
  wnorm = std::sqrt(wnorm);

  Dataset<T> d;
  d.inputs = Tensor<T>::uninit({n, features});
  d.labels = Tensor<T>::uninit({n});
  RngState xrng(seed, 2);
  std::vector<double> row(features);
  for (int64_t i = 0; i < n; ++i) {
    double score = 0;
    for (int attempt = 0;; ++attempt) {
      score = 0;
      for (int64_t f = 0; f < features; ++f) {
        row[f] = rng_uniform(xrng, -1, 1);
        score += row[f] * w[f];
      }
      if (std::abs(score) / wnorm >= 0.05 || attempt > 64) break;
    }
    for (int64_t f = 0; f < features; ++f) {
      d.inputs.mutable_data()[i * features + f] = static_cast<T>(row[f]);
    }
    d.labels.mutable_data()[i] = score > 0 ? T(1) : T(0);
  }
  d.name = "adult_like";
  d.count = n;
  d.classes = 2;
  return d;
}

template <typename T>
Dataset<T> synth_tokens(int64_t n, uint64_t seed, int64_t seq, int64_t vocab) {
  Dataset<T> d;
  d.inputs = Tensor<T>::uninit({n, seq});
  d.labels = Tensor<T>::uninit({n});
  RngState rng(seed, 3);
  for (int64_t i = 0; i < n; ++i) {
    double mean = 0;
    for (int64_t t = 0; t < seq; ++t) {
      const double id = std::floor(rng_uniform(rng, 0, vocab));
      d.inputs.mutable_data()[i * seq + t] = static_cast<T>(id);
      mean += id;
    }
    mean /= static_cast<double>(seq);
    d.labels.mutable_data()[i] = mean > (vocab - 1) / 2.0 ? T(1) : T(0);
  }
  d.name = "tokens";
  d.count = n;
  d.classes = 2;
  return d;
}

template <typename T>
Dataset<T> synth_images(int64_t n, uint64_t seed, Shape image_shape,
                        int64_t classes, const std::string& name) {
  Dataset<T> d;
  Shape full = image_shape;
  full.insert(full.begin(), n);
  RngState rng(seed, 4);
  d.inputs = gaussian<T>(full, rng);
  d.labels = Tensor<T>::uninit({n});
  RngState lrng(seed, 5);
  for (int64_t i = 0; i < n; ++i) {
    d.labels.mutable_data()[i] =
        static_cast<T>(std::floor(rng_uniform(lrng, 0, classes)));
  }
  d.name = name;
  d.count = n;
  d.classes = classes;
  return d;
}

}  // namespace

template <typename T>
Dataset<T> synth(SynthKind kind, int64_t n, uint64_t seed) {
  if (n <= 0) throw ConfigError("synth: n must be positive");
  switch (kind) {
    case SynthKind::adult_like:
      return synth_adult<T>(n, seed, 104);
    case SynthKind::tokens:
      return synth_tokens<T>(n, seed, 256, 10004);
    case SynthKind::cifar_like:
      return synth_images<T>(n, seed, {3, 32, 32}, 10, "cifar_like");
  }
  throw ConfigError("synth: bad kind");
}

template <typename T>
Dataset<T> synth_for_model(const models::ModelDesc& desc, int64_t n,
                           uint64_t seed) {
  using models::ModelKind;
  switch (desc.kind) {
    case ModelKind::logreg:
    case ModelKind::fcnn:
      return synth_adult<T>(n, seed, desc.input_shape[0]);
    case ModelKind::embed:
    case ModelKind::lstm:
      return synth_tokens<T>(n, seed, desc.input_shape[0],
                             desc.layers[0].in);
    case ModelKind::mnist_cnn:
      return synth_images<T>(n, seed, desc.input_shape, 10, "mnist_like");
    case ModelKind::cifar_cnn:
      return synth_images<T>(n, seed, desc.input_shape, 10, "cifar_like");
  }
  throw ConfigError("synth_for_model: bad model kind");
}

template <typename T>
Batch<T> slice_batch(const Dataset<T>& data, int64_t start, int64_t count) {
  if (start < 0 || start + count > data.count) {
    throw ContractError("slice_batch: range out of bounds");
  }
  const int64_t row = numel(data.inputs.shape()) / data.count;
  Shape xs = data.inputs.shape();
  xs[0] = count;
  Batch<T> b;
  b.x = Tensor<T>::from(
      xs, std::vector<T>(data.inputs.data() + start * row,
                         data.inputs.data() + (start + count) * row));
  b.y = Tensor<T>::from(
      {count}, std::vector<T>(data.labels.data() + start,
                              data.labels.data() + start + count));
  return b;
}

#define PEGRAD_INSTANTIATE_IO(T)                                            \
  template Tensor<T> load_idx<T>(const std::string&);                       \
  template Dataset<T> load_mnist<T>(const std::string&, const std::string&); \
  template Dataset<T> synth<T>(SynthKind, int64_t, uint64_t);               \
  template Dataset<T> synth_for_model<T>(const models::ModelDesc&, int64_t, \
                                         uint64_t);                         \
  template Batch<T> slice_batch<T>(const Dataset<T>&, int64_t, int64_t);

PEGRAD_INSTANTIATE_IO(float)
PEGRAD_INSTANTIATE_IO(double)

#undef PEGRAD_INSTANTIATE_IO

}  // namespace pegrad::io
