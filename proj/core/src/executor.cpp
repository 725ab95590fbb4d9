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

#include "pegrad/executor.hpp"

#include <cstring>
#include <limits>

#include "pegrad/detail/kernels.hpp"

namespace pegrad {

namespace {

// One kernel dispatch shared by both modes.
template <typename T>
void execute_node(const Node& node, const std::vector<const T*>& in,
                  const std::vector<const Shape*>& ins, T* out) {
  const auto& ints = node.attrs.ints;
  switch (node.kind) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv:
    case OpKind::kMaximum:
    case OpKind::kGtMask:
    case OpKind::kGeMask:
      detail::ew_binary_kernel(node.kind, in[0], *ins[0], in[1], *ins[1], out,
                               node.shape);
      return;
    case OpKind::kNeg:
    case OpKind::kExp:
    case OpKind::kLog:
    case OpKind::kTanh:
    case OpKind::kSigmoid:
    case OpKind::kRelu:
    case OpKind::kSquare:
    case OpKind::kSqrt:
    case OpKind::kBroadcast:
      detail::ew_unary_kernel(node.kind, in[0], *ins[0], out, node.shape);
      return;
    case OpKind::kTranspose:
      detail::transpose_kernel(in[0], *ins[0], node.attrs.ints, out);
      return;
    case OpKind::kSliceAxis:
      detail::slice_axis_kernel(in[0], *ins[0], ints[0], ints[1], ints[2],
                                out);
      return;
    case OpKind::kPadAxis:
      detail::pad_axis_kernel(in[0], *ins[0], ints[0], ints[1], ints[2], out);
      return;
    case OpKind::kMatmul:
      detail::matmul_kernel(in[0], (*ins[0])[0], (*ins[0])[1], in[1],
                            (*ins[1])[1], out);
      return;
    case OpKind::kBmm:
      detail::bmm_kernel(in[0], (*ins[0])[0], in[1], (*ins[1])[0],
                         (*ins[0])[1], (*ins[0])[2], (*ins[1])[2], out);
      return;
    case OpKind::kReduceSum:
    case OpKind::kReduceMax: {
      const Shape& s = *ins[0];
      const int64_t axis = ints[0];
      int64_t outer = 1, inner = 1;
      for (int64_t i = 0; i < axis; ++i) outer *= s[i];
      for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
      if (node.kind == OpKind::kReduceSum) {
        detail::reduce_sum_kernel(in[0], outer, s[axis], inner, out);
      } else {
        detail::reduce_max_kernel(in[0], outer, s[axis], inner, out);
      }
      return;
    }
    case OpKind::kMaxGrad: {
      const Shape& s = *ins[0];
      const int64_t axis = ints[0];
      int64_t outer = 1, inner = 1;
      for (int64_t i = 0; i < axis; ++i) outer *= s[i];
      for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
      detail::max_grad_kernel(in[0], in[1], outer, s[axis], inner, out);
      return;
    }
    case OpKind::kIm2col: {
      const Shape& s = *ins[0];
      detail::im2col_kernel(in[0], s[0], s[1], s[2], s[3], ints[0], ints[1],
                            ints[2], ints[3], out);
      return;
    }
    case OpKind::kCol2im: {
      const Shape& s = *ins[0];
      detail::col2im_kernel(in[0], s[0], ints[4], ints[5], ints[6], ints[0],
                            ints[1], ints[2], ints[3], out);
      return;
    }
    case OpKind::kGatherRows: {
      const Shape& st = *ins[0];
      detail::gather_rows_kernel(in[0], st[0], st[1], in[1], numel(*ins[1]),
                                 out);
      return;
    }
    case OpKind::kScatterAdd: {
      const Shape& sg = *ins[0];
      detail::scatter_add_kernel(in[0], in[1], numel(*ins[1]), sg.back(),
                                 ints[0], out);
      return;
    }
    case OpKind::kSoftmaxXent: {
      const Shape& sl = *ins[0];
      detail::softmax_xent_kernel(in[0], in[1], sl[0], sl[1], out);
      return;
    }
    case OpKind::kSoftmaxXentGrad: {
      const Shape& sl = *ins[0];
      detail::softmax_xent_grad_kernel(in[0], in[1], in[2], sl[0], sl[1],
                                       out);
      return;
    }
    case OpKind::kInput:
    case OpKind::kParam:
    case OpKind::kConst:
    case OpKind::kReshape:
      break;
  }
  throw ContractError("execute_node: unexpected op kind " +
                      std::string(op_name(node.kind)));
}

struct FusedSrc {
  bool is_reg = false;
  int32_t idx = 0;  // register (member/step) index or external index
};

struct FusedStep {
  OpKind kind;
  bool binary;
  FusedSrc a, b;
};

struct FusedProg {
  std::vector<FusedStep> steps;
  std::vector<int32_t> externals;  // node ids
  std::vector<std::vector<int64_t>> ext_strides;
  Shape out_shape;
  int32_t terminal = -1;
  bool all_flat = false;              // externals aligned flat or scalar
  std::vector<int64_t> ext_mult;      // 1 = elementwise, 0 = scalar
};

template <typename T>
void run_fused(const FusedProg& p, const std::vector<const T*>& ext, T* out) {
  const Shape& os = p.out_shape;
  const size_t r = os.size();
  const int64_t n = numel(os);
  const size_t ne = ext.size();
  std::vector<T> regs(p.steps.size());
  if (p.all_flat) {
    // Vector-VM path: every external is elementwise-aligned with the output
    // or a scalar, so the chain runs over 64-wide register blocks with the
    // op dispatch hoisted out of the element loop. Per-element arithmetic
    // and order match the scalar path exactly.
    constexpr int64_t kBlock = 64;
    const int64_t* mult = p.ext_mult.data();
    std::vector<T> block_regs(p.steps.size() * kBlock);
    for (int64_t base = 0; base < n; base += kBlock) {
      const int64_t len = std::min(kBlock, n - base);
      for (size_t s = 0; s < p.steps.size(); ++s) {
        const FusedStep& st = p.steps[s];
        T* dst = block_regs.data() + s * kBlock;
        const T* a_reg = st.a.is_reg
                             ? block_regs.data() + st.a.idx * kBlock
                             : nullptr;
        const T* a_ext = a_reg ? nullptr : ext[st.a.idx] + base * mult[st.a.idx];
        const int64_t a_mult = a_reg ? 1 : mult[st.a.idx];
        if (st.binary) {
          const T* b_reg = st.b.is_reg
                               ? block_regs.data() + st.b.idx * kBlock
                               : nullptr;
          const T* b_ext =
              b_reg ? nullptr : ext[st.b.idx] + base * mult[st.b.idx];
          const int64_t b_mult = b_reg ? 1 : mult[st.b.idx];
          const T* a_src = a_reg ? a_reg : a_ext;
          const T* b_src = b_reg ? b_reg : b_ext;
          switch (st.kind) {
#define PEGRAD_FUSED_BIN(KIND)                                            \
  case OpKind::KIND:                                                      \
    for (int64_t e = 0; e < len; ++e) {                                   \
      dst[e] = detail::scalar_binary<T>(OpKind::KIND, a_src[e * a_mult],  \
                                        b_src[e * b_mult]);               \
    }                                                                     \
    break;
            PEGRAD_FUSED_BIN(kAdd)
            PEGRAD_FUSED_BIN(kSub)
            PEGRAD_FUSED_BIN(kMul)
            PEGRAD_FUSED_BIN(kDiv)
            PEGRAD_FUSED_BIN(kMaximum)
            PEGRAD_FUSED_BIN(kGtMask)
            PEGRAD_FUSED_BIN(kGeMask)
#undef PEGRAD_FUSED_BIN
            default:
              throw ContractError("fused step: unexpected binary kind");
          }
        } else {
          const T* a_src = a_reg ? a_reg : a_ext;
          switch (st.kind) {
#define PEGRAD_FUSED_UN(KIND)                                              \
  case OpKind::KIND:                                                       \
    for (int64_t e = 0; e < len; ++e) {                                    \
      dst[e] = detail::scalar_unary<T>(OpKind::KIND, a_src[e * a_mult]);   \
    }                                                                      \
    break;
            PEGRAD_FUSED_UN(kNeg)
            PEGRAD_FUSED_UN(kExp)
            PEGRAD_FUSED_UN(kLog)
            PEGRAD_FUSED_UN(kTanh)
            PEGRAD_FUSED_UN(kSigmoid)
            PEGRAD_FUSED_UN(kRelu)
            PEGRAD_FUSED_UN(kSquare)
            PEGRAD_FUSED_UN(kSqrt)
            PEGRAD_FUSED_UN(kBroadcast)
#undef PEGRAD_FUSED_UN
            default:
              throw ContractError("fused step: unexpected unary kind");
          }
        }
      }
      std::memcpy(out + base,
                  block_regs.data() + (p.steps.size() - 1) * kBlock,
                  sizeof(T) * len);
    }
    return;
  }
  std::vector<int64_t> idx(r, 0);
  std::vector<int64_t> off(ne, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    for (size_t s = 0; s < p.steps.size(); ++s) {
      const FusedStep& st = p.steps[s];
      const T a = st.a.is_reg ? regs[st.a.idx] : ext[st.a.idx][off[st.a.idx]];
      T v;
      if (st.binary) {
        const T b =
            st.b.is_reg ? regs[st.b.idx] : ext[st.b.idx][off[st.b.idx]];
        v = detail::scalar_binary(st.kind, a, b);
      } else {
        v = detail::scalar_unary(st.kind, a);
      }
      regs[s] = v;
    }
    out[flat] = regs.back();
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      for (size_t e = 0; e < ne; ++e) off[e] += p.ext_strides[e][d];
      if (idx[d] < os[d]) break;
      for (size_t e = 0; e < ne; ++e) off[e] -= p.ext_strides[e][d] * os[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
struct Executor<T>::Impl {
  ExecMode mode;
  std::shared_ptr<const Tape> tape_holder;
  std::shared_ptr<const Graph> graph;
  const Tape* tape = nullptr;

  std::vector<Tensor<T>> consts;   // per const ordinal
  std::vector<int32_t> const_ix;   // node -> const ordinal or -1

  // eager
  std::vector<int64_t> last_use;   // per node; INT64_MAX pins to end
  int64_t eager_peak_elems_ = 0;

  // graph; the arena is sized at build time but allocated on first run so
  // footprint probes (max batch search) never touch memory
  std::vector<T> arena;
  int64_t arena_elems = 0;
  std::vector<int64_t> buffer_off;
  std::vector<const T*> base;  // per-node resolved pointers, last run
  enum class LocKind : uint8_t { none, param, input, cnst, buffer };
  struct Loc {
    LocKind kind = LocKind::none;
    int32_t index = 0;
    int64_t offset = 0;  // arena offset for buffers
  };
  std::vector<Loc> loc;  // per node, aliases resolved
  struct Step {
    bool fused;
    int32_t node;   // plain node or group terminal
    int32_t group;  // fused program index
  };
  std::vector<Step> schedule;
  std::vector<FusedProg> fused;

  void build_consts() {
    const_ix.assign(tape->nodes.size(), -1);
    for (size_t i = 0; i < tape->nodes.size(); ++i) {
      const Node& n = tape->nodes[i];
      if (n.kind != OpKind::kConst) continue;
      Tensor<T> t = Tensor<T>::uninit(n.shape);
      T* p = t.mutable_data();
      for (size_t j = 0; j < n.attrs.values.size(); ++j) {
        p[j] = static_cast<T>(n.attrs.values[j]);
      }
      const_ix[i] = static_cast<int32_t>(consts.size());
      consts.push_back(std::move(t));
    }
  }

  void build_eager() {
    build_consts();
    const size_t n = tape->nodes.size();
    last_use.assign(n, -1);
    for (size_t v = 0; v < n; ++v) {
      for (int32_t in : tape->nodes[v].inputs) {
        last_use[in] = std::max(last_use[in], static_cast<int64_t>(v));
      }
    }
    constexpr int64_t kEnd = std::numeric_limits<int64_t>::max();
    if (tape->loss >= 0) last_use[tape->loss] = kEnd;
    for (const auto& [id, name] : tape->outputs) last_use[id] = kEnd;
    eager_peak_elems_ = eager_peak_elems(*tape);
  }

  void build_graph() {
    build_consts();
    const BufferPlan& plan = graph->plan;
    const FusionResult& fusion = graph->fusion;
    const size_t n = tape->nodes.size();

    buffer_off.resize(plan.buffer_elems.size());
    int64_t acc = 0;
    for (size_t b = 0; b < plan.buffer_elems.size(); ++b) {
      buffer_off[b] = acc;
      acc += plan.buffer_elems[b];
    }
    arena_elems = acc;

    // Param/input ordinals.
    std::vector<int32_t> param_ord(n, -1), input_ord(n, -1);
    for (size_t i = 0; i < tape->params.size(); ++i)
      param_ord[tape->params[i]] = static_cast<int32_t>(i);
    for (size_t i = 0; i < tape->inputs.size(); ++i)
      input_ord[tape->inputs[i]] = static_cast<int32_t>(i);

    loc.assign(n, {});
    for (size_t v = 0; v < n; ++v) {
      const int32_t root = plan.alias_root[v];
      const Node& rn = tape->nodes[root];
      Loc& l = loc[v];
      if (rn.kind == OpKind::kParam) {
        l = {LocKind::param, param_ord[root], 0};
      } else if (rn.kind == OpKind::kInput) {
        l = {LocKind::input, input_ord[root], 0};
      } else if (rn.kind == OpKind::kConst) {
        l = {LocKind::cnst, const_ix[root], 0};
      } else if (plan.node_buffer[root] >= 0) {
        l = {LocKind::buffer, plan.node_buffer[root],
             buffer_off[plan.node_buffer[root]]};
      }  // fused interior: none
    }

    // Compile fused programs.
    fused.resize(fusion.groups.size());
    for (size_t g = 0; g < fusion.groups.size(); ++g) {
      const auto& members = fusion.groups[g];
      FusedProg& prog = fused[g];
      prog.terminal = members.back();
      prog.out_shape = tape->nodes[prog.terminal].shape;
      std::vector<int32_t> member_step(n, -1);
      for (size_t m = 0; m < members.size(); ++m) {
        member_step[members[m]] = static_cast<int32_t>(m);
      }
      auto external_index = [&](int32_t node_id) {
        for (size_t e = 0; e < prog.externals.size(); ++e) {
          if (prog.externals[e] == node_id) return static_cast<int32_t>(e);
        }
        prog.externals.push_back(node_id);
        prog.ext_strides.push_back(detail::broadcast_strides(
            tape->nodes[node_id].shape, prog.out_shape));
        return static_cast<int32_t>(prog.externals.size() - 1);
      };
      for (int32_t m : members) {
        const Node& node = tape->nodes[m];
        FusedStep st;
        st.kind = node.kind;
        st.binary = is_ew_binary(node.kind);
        auto src = [&](int32_t in_id) -> FusedSrc {
          if (member_step[in_id] >= 0) return {true, member_step[in_id]};
          return {false, external_index(in_id)};
        };
        st.a = src(node.inputs[0]);
        if (st.binary) st.b = src(node.inputs[1]);
        prog.steps.push_back(st);
      }
      prog.all_flat = true;
      const std::vector<int64_t> flat = row_major_strides(prog.out_shape);
      for (const auto& strides : prog.ext_strides) {
        const bool is_flat = strides == flat;
        bool is_scalar = true;
        for (int64_t v : strides) is_scalar &= v == 0;
        if (!is_flat && !is_scalar) {
          prog.all_flat = false;
          break;
        }
        prog.ext_mult.push_back(is_flat ? 1 : 0);
      }
    }

    // Schedule: plain nodes and group terminals in node order.
    std::vector<int32_t> group_terminal(fusion.groups.size());
    for (size_t g = 0; g < fusion.groups.size(); ++g) {
      group_terminal[g] = fusion.groups[g].back();
    }
    for (size_t v = 0; v < n; ++v) {
      const Node& node = tape->nodes[v];
      if (is_leaf(node.kind) || node.kind == OpKind::kReshape) continue;
      if (fusion.interior[v]) continue;
      const int32_t g = fusion.group_of[v];
      if (g >= 0 && group_terminal[g] == static_cast<int32_t>(v)) {
        schedule.push_back({true, static_cast<int32_t>(v), g});
      } else {
        schedule.push_back({false, static_cast<int32_t>(v), -1});
      }
    }
  }
};

template <typename T>
Executor<T>::Executor(std::shared_ptr<const Tape> tape)
    : impl_(std::make_unique<Impl>()) {
  impl_->mode = ExecMode::eager;
  impl_->tape_holder = std::move(tape);
  impl_->tape = impl_->tape_holder.get();
  impl_->build_eager();
}

template <typename T>
Executor<T>::Executor(std::shared_ptr<const Graph> graph)
    : impl_(std::make_unique<Impl>()) {
  impl_->mode = ExecMode::graph;
  impl_->graph = std::move(graph);
  impl_->tape = &impl_->graph->tape;
  impl_->build_graph();
}

template <typename T>
Executor<T>::~Executor() = default;
template <typename T>
Executor<T>::Executor(Executor&&) noexcept = default;
template <typename T>
Executor<T>& Executor<T>::operator=(Executor&&) noexcept = default;

namespace {

template <typename T>
void validate_leaves(const Tape& tape, const std::vector<Tensor<T>>& params,
                     const std::vector<Tensor<T>>& inputs) {
  if (params.size() != tape.params.size()) {
    throw ShapeError("executor: expected " + std::to_string(tape.params.size()) +
                     " params, got " + std::to_string(params.size()));
  }
  if (inputs.size() != tape.inputs.size()) {
    throw ShapeError("executor: expected " + std::to_string(tape.inputs.size()) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != tape.nodes[tape.params[i]].shape) {
      throw ShapeError("param '" + tape.param_names[i] + "' expects " +
                       shape_str(tape.nodes[tape.params[i]].shape) + ", got " +
                       shape_str(params[i].shape()));
    }
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != tape.nodes[tape.inputs[i]].shape) {
      throw ShapeError("input '" + tape.input_names[i] + "' expects " +
                       shape_str(tape.nodes[tape.inputs[i]].shape) + ", got " +
                       shape_str(inputs[i].shape()));
    }
  }
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> Executor<T>::run(const std::vector<Tensor<T>>& params,
                                        const std::vector<Tensor<T>>& inputs) {
  Impl& im = *impl_;
  const Tape& tape = *im.tape;
  validate_leaves(tape, params, inputs);

  if (im.mode == ExecMode::eager) {
    const size_t n = tape.nodes.size();
    std::vector<Tensor<T>> slot(n);
    std::vector<const T*> in_ptr;
    std::vector<const Shape*> in_shape;
    size_t param_ord = 0, input_ord = 0, const_ord = 0;
    for (size_t v = 0; v < n; ++v) {
      const Node& node = tape.nodes[v];
      switch (node.kind) {
        case OpKind::kParam:
          slot[v] = params[param_ord++];
          continue;
        case OpKind::kInput:
          slot[v] = inputs[input_ord++];
          continue;
        case OpKind::kConst:
          slot[v] = im.consts[const_ord++];
          continue;
        case OpKind::kReshape:
          slot[v] = slot[node.inputs[0]].reshaped(node.shape);
          continue;
        default:
          break;
      }
      Tensor<T> out = Tensor<T>::uninit(node.shape);
      in_ptr.clear();
      in_shape.clear();
      for (int32_t in : node.inputs) {
        in_ptr.push_back(slot[in].data());
        in_shape.push_back(&tape.nodes[in].shape);
      }
      execute_node(node, in_ptr, in_shape, out.mutable_data());
      slot[v] = std::move(out);
      // Free values whose last consumer has run.
      for (int32_t in : node.inputs) {
        if (im.last_use[in] == static_cast<int64_t>(v)) {
          slot[in] = Tensor<T>();
        }
      }
    }
    std::vector<Tensor<T>> outs;
    outs.reserve(tape.outputs.size());
    for (const auto& [id, name] : tape.outputs) outs.push_back(slot[id]);
    return outs;
  }

  // graph mode
  exec_graph(params, inputs);
  std::vector<Tensor<T>> outs;
  outs.reserve(tape.outputs.size());
  for (const auto& [id, name] : tape.outputs) {
    Tensor<T> t = Tensor<T>::uninit(tape.nodes[id].shape);
    std::memcpy(t.mutable_data(), impl_->base[id], sizeof(T) * t.size());
    outs.push_back(std::move(t));
  }
  return outs;
}

template <typename T>
auto Executor<T>::run_views(const std::vector<Tensor<T>>& params,
                            const std::vector<Tensor<T>>& inputs)
    -> std::vector<ValueView> {
  Impl& im = *impl_;
  if (im.mode != ExecMode::graph) {
    throw ContractError("run_views: graph-mode executors only");
  }
  validate_leaves(im.graph->tape, params, inputs);
  exec_graph(params, inputs);
  std::vector<ValueView> views;
  views.reserve(im.tape->outputs.size());
  for (const auto& [id, name] : im.tape->outputs) {
    views.push_back({im.base[id], im.tape->nodes[id].shape});
  }
  return views;
}

template <typename T>
void Executor<T>::exec_graph(const std::vector<Tensor<T>>& params,
                             const std::vector<Tensor<T>>& inputs) {
  Impl& im = *impl_;
  const Tape& tape = *im.tape;
  if (static_cast<int64_t>(im.arena.size()) != im.arena_elems) {
    im.arena.assign(im.arena_elems, T(0));
  }
  const size_t n = tape.nodes.size();
  im.base.assign(n, nullptr);
  for (size_t v = 0; v < n; ++v) {
    const auto& l = im.loc[v];
    switch (l.kind) {
      case Impl::LocKind::param: im.base[v] = params[l.index].data(); break;
      case Impl::LocKind::input: im.base[v] = inputs[l.index].data(); break;
      case Impl::LocKind::cnst: im.base[v] = im.consts[l.index].data(); break;
      case Impl::LocKind::buffer:
        im.base[v] = im.arena.data() + l.offset;
        break;
      case Impl::LocKind::none: break;
    }
  }
  std::vector<const T*> in_ptr;
  std::vector<const Shape*> in_shape;
  std::vector<const T*> ext_ptr;
  for (const auto& step : im.schedule) {
    T* out = im.arena.data() + im.loc[step.node].offset;
    if (step.fused) {
      const FusedProg& prog = im.fused[step.group];
      ext_ptr.clear();
      for (int32_t e : prog.externals) ext_ptr.push_back(im.base[e]);
      run_fused(prog, ext_ptr, out);
      continue;
    }
    const Node& node = tape.nodes[step.node];
    in_ptr.clear();
    in_shape.clear();
    for (int32_t in : node.inputs) {
      in_ptr.push_back(im.base[in]);
      in_shape.push_back(&tape.nodes[in].shape);
    }
    execute_node(node, in_ptr, in_shape, out);
  }
}

template <typename T>
ExecMode Executor<T>::mode() const {
  return impl_->mode;
}

template <typename T>
const Tape& Executor<T>::tape() const {
  return *impl_->tape;
}

template <typename T>
const Graph* Executor<T>::graph() const {
  return impl_->graph.get();
}

template <typename T>
int64_t Executor<T>::arena_bytes() const {
  return impl_->arena_elems * static_cast<int64_t>(sizeof(T));
}

template <typename T>
int64_t Executor<T>::workspace_peak_bytes() const {
  if (impl_->mode == ExecMode::graph) return arena_bytes();
  return impl_->eager_peak_elems_ * static_cast<int64_t>(sizeof(T));
}

template class Executor<float>;
template class Executor<double>;

}  // namespace pegrad
