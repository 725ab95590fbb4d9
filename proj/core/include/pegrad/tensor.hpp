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

#include <cstring>
#include <memory>
#include <vector>

#include "pegrad/common.hpp"
#include "pegrad/detail/buffer_pool.hpp"

namespace pegrad {

namespace detail {
template <typename T>
std::shared_ptr<T[]> acquire_storage(int64_t n) {
  const size_t bytes = static_cast<size_t>(n) * sizeof(T);
  void* raw = pool_acquire(bytes);
  if (!raw) raw = ::operator new(bytes);
  return std::shared_ptr<T[]>(static_cast<T*>(raw),
                              [bytes](T* p) { pool_release(p, bytes); });
}
}  // namespace detail

// Dense row-major contiguous tensor. Element type is float for benchmark
// builds and double for oracle/equivalence testing; both are always
// instantiated and the caller picks. Tensors are immutable after
// construction by convention: ops return fresh tensors and never write
// through their inputs, so sharing across threads is safe. reshaped()
// aliases the same storage.
template <typename T>
class Tensor {
 public:
  Tensor() : shape_{0} {}

  // Uninitialized storage; for kernel outputs that overwrite every element.
  static Tensor uninit(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = numel(t.shape_);
    t.data_ = detail::acquire_storage<T>(t.size_);
    return t;
  }

  static Tensor zeros(Shape shape) {
    Tensor t = uninit(std::move(shape));
    std::memset(t.data_.get(), 0, sizeof(T) * t.size_);
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = uninit(std::move(shape));
    for (int64_t i = 0; i < t.size_; ++i) t.data_[i] = value;
    return t;
  }

  static Tensor scalar(T value) { return full({}, value); }

  static Tensor from(Shape shape, const std::vector<T>& values) {
    if (numel(shape) != static_cast<int64_t>(values.size())) {
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " wants " +
                       std::to_string(numel(shape)) + " elements, got " +
                       std::to_string(values.size()));
    }
    Tensor t = uninit(std::move(shape));
    std::memcpy(t.data_.get(), values.data(), sizeof(T) * t.size_);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[i]; }
  int64_t size() const { return size_; }
  bool defined() const { return data_ != nullptr; }

  const T* data() const { return data_.get(); }
  T* mutable_data() { return data_.get(); }
  T at(int64_t flat) const { return data_[flat]; }

  // Metadata-only reshape sharing storage. Total element count must match.
  Tensor reshaped(Shape new_shape) const {
    if (numel(new_shape) != size_) {
      throw ShapeError("reshape " + shape_str(shape_) + " -> " +
                       shape_str(new_shape) + ": element count mismatch");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.size_ = size_;
    t.data_ = data_;
    return t;
  }

  bool same_bits(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::memcmp(data(), other.data(), sizeof(T) * size_) == 0;
  }

  bool shares_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  Shape shape_;
  int64_t size_ = 0;
  std::shared_ptr<T[]> data_;
};

template <typename From, typename To>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out = Tensor<To>::uninit(t.shape());
  const From* src = t.data();
  To* dst = out.mutable_data();
  for (int64_t i = 0; i < t.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace pegrad
