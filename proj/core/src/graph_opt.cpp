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

#include "pegrad/graph_opt.hpp"

#include <algorithm>
#include <limits>

namespace pegrad {

namespace {

std::vector<char> reachable_from_roots(const Tape& tape) {
  std::vector<char> live(tape.nodes.size(), 0);
  std::vector<int32_t> stack;
  auto push = [&](int32_t id) {
    if (id >= 0 && !live[id]) {
      live[id] = 1;
      stack.push_back(id);
    }
  };
  push(tape.loss);
  for (const auto& [id, name] : tape.outputs) push(id);
  while (!stack.empty()) {
    const int32_t id = stack.back();
    stack.pop_back();
    for (int32_t in : tape.nodes[id].inputs) push(in);
  }
  return live;
}

}  // namespace

DceResult dce(const Tape& tape) {
  std::vector<char> live = reachable_from_roots(tape);

  DceResult res;
  // Leaves are kept so positional parameter/input binding is stable.
  for (size_t i = 0; i < tape.params.size(); ++i) {
    if (!live[tape.params[i]]) res.dead_params.push_back(tape.param_names[i]);
    live[tape.params[i]] = 1;
  }
  for (int32_t id : tape.inputs) live[id] = 1;

  std::vector<int32_t> remap(tape.nodes.size(), -1);
  Tape out;
  for (size_t i = 0; i < tape.nodes.size(); ++i) {
    if (!live[i]) {
      ++res.removed;
      continue;
    }
    Node n = tape.nodes[i];
    for (int32_t& in : n.inputs) in = remap[in];
    remap[i] = static_cast<int32_t>(out.nodes.size());
    out.nodes.push_back(std::move(n));
  }
  for (int32_t p : tape.params) out.params.push_back(remap[p]);
  for (int32_t p : tape.inputs) out.inputs.push_back(remap[p]);
  out.param_names = tape.param_names;
  out.input_names = tape.input_names;
  out.loss = tape.loss >= 0 ? remap[tape.loss] : -1;
  for (const auto& [id, name] : tape.outputs) {
    out.outputs.emplace_back(remap[id], name);
  }
  res.tape = std::move(out);
  return res;
}

FusionResult fuse_elementwise(const Tape& tape) {
  const size_t n = tape.nodes.size();
  // Distinct consumer nodes per value (a node using a value twice counts
  // once; fusion still breaks on a second consuming node).
  std::vector<int32_t> consumer(n, -1);   // single consumer id, -2 if many
  for (size_t v = 0; v < n; ++v) {
    for (int32_t in : tape.nodes[v].inputs) {
      if (consumer[in] == -1) {
        consumer[in] = static_cast<int32_t>(v);
      } else if (consumer[in] != static_cast<int32_t>(v)) {
        consumer[in] = -2;
      }
    }
  }
  std::vector<char> pinned(n, 0);  // must materialize: outputs and loss
  if (tape.loss >= 0) pinned[tape.loss] = 1;
  for (const auto& [id, name] : tape.outputs) pinned[id] = 1;

  FusionResult res;
  res.group_of.assign(n, -1);
  res.interior.assign(n, 0);
  std::vector<char> grouped(n, 0);

  for (size_t v = 0; v < n; ++v) {
    if (grouped[v] || !is_elementwise(tape.nodes[v].kind)) continue;
    std::vector<int32_t> chain{static_cast<int32_t>(v)};
    int32_t t = static_cast<int32_t>(v);
    while (!pinned[t]) {
      const int32_t c = consumer[t];
      if (c < 0 || grouped[c] || !is_elementwise(tape.nodes[c].kind)) break;
      chain.push_back(c);
      t = c;
    }
    for (int32_t m : chain) grouped[m] = 1;
    if (chain.size() < 2) continue;
    const int32_t gid = static_cast<int32_t>(res.groups.size());
    for (size_t i = 0; i < chain.size(); ++i) {
      res.group_of[chain[i]] = gid;
      if (i + 1 < chain.size()) res.interior[chain[i]] = 1;
    }
    res.groups.push_back(std::move(chain));
  }
  return res;
}

namespace {

int32_t resolve_alias(const Tape& tape, std::vector<int32_t>& cache,
                      int32_t id) {
  if (cache[id] >= 0) return cache[id];
  int32_t root = id;
  while (tape.nodes[root].kind == OpKind::kReshape) {
    root = tape.nodes[root].inputs[0];
  }
  cache[id] = root;
  return root;
}

}  // namespace

BufferPlan plan_buffers(const Tape& tape, const FusionResult& fusion) {
  const size_t n = tape.nodes.size();
  constexpr int64_t kEnd = std::numeric_limits<int64_t>::max();

  BufferPlan plan;
  plan.node_buffer.assign(n, -1);
  plan.alias_root.assign(n, -1);
  plan.def_step.assign(n, -1);
  plan.last_use.assign(n, -1);

  std::vector<int32_t> alias_cache(n, -1);
  for (size_t i = 0; i < n; ++i) {
    plan.alias_root[i] = resolve_alias(tape, alias_cache, i);
  }

  auto materializes = [&](int32_t id) {
    const Node& node = tape.nodes[id];
    if (is_leaf(node.kind) || node.kind == OpKind::kReshape) return false;
    if (fusion.interior[id]) return false;
    return true;
  };

  // Execution step = node id; fused interiors run inside the terminal step.
  for (size_t v = 0; v < n; ++v) {
    if (materializes(static_cast<int32_t>(v))) {
      plan.def_step[v] = static_cast<int64_t>(v);
      plan.no_reuse_elems += numel(tape.nodes[v].shape);
    }
  }

  auto note_use = [&](int32_t value, int64_t step) {
    const int32_t root = plan.alias_root[value];
    plan.last_use[root] = std::max(plan.last_use[root], step);
  };
  for (size_t v = 0; v < n; ++v) {
    const int64_t step =
        fusion.interior[v]
            ? static_cast<int64_t>(fusion.groups[fusion.group_of[v]].back())
            : static_cast<int64_t>(v);
    for (int32_t in : tape.nodes[v].inputs) note_use(in, step);
  }
  if (tape.loss >= 0) note_use(tape.loss, kEnd);
  for (const auto& [id, name] : tape.outputs) note_use(id, kEnd);

  // Greedy assignment over definition order. A consumed buffer frees one
  // step after its last use (kernels may not write outputs in place).
  struct FreeBuf {
    int64_t elems;
    int32_t id;
  };
  std::vector<FreeBuf> free_list;
  std::vector<std::pair<int64_t, int32_t>> releases;  // (last_use, node)

  for (size_t v = 0; v < n; ++v) {
    if (plan.def_step[v] < 0) continue;
    const int64_t step = plan.def_step[v];
    // Return buffers dead before this step.
    for (auto it = releases.begin(); it != releases.end();) {
      if (it->first < step) {
        const int32_t node = it->second;
        free_list.push_back(
            {plan.buffer_elems[plan.node_buffer[node]], plan.node_buffer[node]});
        it = releases.erase(it);
      } else {
        ++it;
      }
    }
    const int64_t need = numel(tape.nodes[v].shape);
    int32_t chosen = -1;
    size_t chosen_at = 0;
    for (size_t f = 0; f < free_list.size(); ++f) {  // exact match first
      if (free_list[f].elems == need) {
        chosen = free_list[f].id;
        chosen_at = f;
        break;
      }
    }
    if (chosen < 0) {  // best fit: smallest free buffer that holds it
      for (size_t f = 0; f < free_list.size(); ++f) {
        if (free_list[f].elems >= need &&
            (chosen < 0 || free_list[f].elems < free_list[chosen_at].elems)) {
          chosen = free_list[f].id;
          chosen_at = f;
        }
      }
    }
    if (chosen >= 0) {
      free_list.erase(free_list.begin() + chosen_at);
    } else {
      chosen = static_cast<int32_t>(plan.buffer_elems.size());
      plan.buffer_elems.push_back(need);
    }
    plan.node_buffer[v] = chosen;
    const int64_t lu = plan.last_use[v];
    if (lu != kEnd) releases.emplace_back(lu, static_cast<int32_t>(v));
    // Values with no recorded use (possible only for pinned outputs) stay.
  }

  for (int64_t e : plan.buffer_elems) plan.planned_peak_elems += e;
  return plan;
}

int64_t eager_peak_elems(const Tape& tape) {
  const size_t n = tape.nodes.size();
  std::vector<int32_t> alias_cache(n, -1);
  std::vector<int64_t> last_use(n, -1);
  constexpr int64_t kEnd = std::numeric_limits<int64_t>::max();
  std::vector<int32_t> roots(n);
  for (size_t i = 0; i < n; ++i) {
    roots[i] = resolve_alias(tape, alias_cache, static_cast<int32_t>(i));
  }
  for (size_t v = 0; v < n; ++v) {
    for (int32_t in : tape.nodes[v].inputs) {
      last_use[roots[in]] =
          std::max(last_use[roots[in]], static_cast<int64_t>(v));
    }
  }
  if (tape.loss >= 0) last_use[roots[tape.loss]] = kEnd;
  for (const auto& [id, name] : tape.outputs) last_use[roots[id]] = kEnd;

  int64_t live = 0, peak = 0;
  std::vector<std::pair<int64_t, int64_t>> releases;  // (last_use, elems)
  for (size_t v = 0; v < n; ++v) {
    const Node& node = tape.nodes[v];
    if (is_leaf(node.kind) || node.kind == OpKind::kReshape) continue;
    live += numel(node.shape);
    peak = std::max(peak, live);
    if (last_use[v] == kEnd) continue;
    releases.emplace_back(last_use[v], numel(node.shape));
    // Free everything whose last use has passed.
    for (auto it = releases.begin(); it != releases.end();) {
      if (it->first <= static_cast<int64_t>(v)) {
        live -= it->second;
        it = releases.erase(it);
      } else {
        ++it;
      }
    }
  }
  return peak;
}

std::shared_ptr<const Graph> optimize(const Tape& tape) {
  auto g = std::make_shared<Graph>();
  DceResult d = dce(tape);
  g->tape = std::move(d.tape);
  g->fusion = fuse_elementwise(g->tape);
  g->plan = plan_buffers(g->tape, g->fusion);
  g->report.removed_nodes = d.removed;
  g->report.dead_params = std::move(d.dead_params);
  g->report.fusion_groups = static_cast<int64_t>(g->fusion.groups.size());
  for (const auto& grp : g->fusion.groups) {
    g->report.fused_nodes += static_cast<int64_t>(grp.size());
  }
  g->report.planned_peak_elems = g->plan.planned_peak_elems;
  g->report.no_reuse_elems = g->plan.no_reuse_elems;
  return g;
}

}  // namespace pegrad
