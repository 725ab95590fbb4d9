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
#include <vector>

namespace pegrad::selfcheck {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// The 64-bit equivalence/oracle battery over the real benchmark
// architectures. Each function covers one acceptance area:
//   strategy equivalence   every supported strategy vs. the naive loop
//   gradient oracle        VJPs and full model gradients vs. central
//                          finite differences
//   dpsgd semantics        clipping, noise calibration, microbatching
//   graph soundness        pass semantic preservation, plan audits, the
//                          MNIST CNN reuse ratio
//   memory model           max-batch monotonicity, norms vs. vmap capacity
//   support matrix         typed rejections where support is missing
std::vector<CheckResult> check_strategy_equivalence();
std::vector<CheckResult> check_gradient_oracle();
std::vector<CheckResult> check_dpsgd_semantics();
std::vector<CheckResult> check_graph_soundness();
std::vector<CheckResult> check_memory_model();
std::vector<CheckResult> check_support_matrix();

std::vector<CheckResult> run_all();
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace pegrad::selfcheck
