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

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pegrad {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// Row-major strides in elements.
inline std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size());
  int64_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    strides[i] = acc;
    acc *= shape[i];
  }
  return strides;
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not match the operation (broadcast failure, bad extents).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input value outside the mathematical domain of an op (log of 0, sqrt of
// negative). The message names the offending flat index.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Out-of-range or non-integral index (gather/scatter ids, labels).
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid user-facing configuration (DpConfig, CLI combinations).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An API precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Requested functionality exists in the system but not for this combination
// (strategy vs. architecture, missing VJP/batching rule).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Program used an op outside the traceable primitive set.
class TraceError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (IDX parsing).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pegrad
