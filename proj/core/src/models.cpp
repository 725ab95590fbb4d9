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

#include "pegrad/models.hpp"

#include <cmath>
#include <memory>

#include "pegrad/detail/kernels.hpp"
#include "pegrad/executor.hpp"
#include "pegrad/tensor_ops.hpp"

namespace pegrad::models {

const char* model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::logreg: return "logreg";
    case ModelKind::fcnn: return "fcnn";
    case ModelKind::mnist_cnn: return "mnist_cnn";
    case ModelKind::cifar_cnn: return "cifar_cnn";
    case ModelKind::embed: return "embed";
    case ModelKind::lstm: return "lstm";
  }
  return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
  for (ModelKind k : {ModelKind::logreg, ModelKind::fcnn, ModelKind::mnist_cnn,
                      ModelKind::cifar_cnn, ModelKind::embed, ModelKind::lstm}) {
    if (name == model_name(k)) return k;
  }
  throw ConfigError("unknown model '" + name +
                    "' (expected one of logreg, fcnn, mnist_cnn, cifar_cnn, "
                    "embed, lstm)");
}

namespace {

void register_params(ModelDesc& desc) {
  auto add = [&](std::string name, Shape shape, int64_t fan_in) {
    desc.param_names.push_back(std::move(name));
    desc.param_shapes.push_back(std::move(shape));
    desc.param_fan_in.push_back(fan_in);
  };
  int layer_ix = 0;
  for (const LayerSpec& l : desc.layers) {
    const std::string prefix = "l" + std::to_string(layer_ix) + ".";
    switch (l.kind) {
      case LayerKind::dense:
        // (in, out) layout: y = x W + b, so neither the forward nor the
        // backward pass moves the weight matrix around
        add(prefix + "W", {l.in, l.out}, l.in);
        add(prefix + "b", {l.out}, 0);
        break;
      case LayerKind::conv:
        add(prefix + "W", {l.out, l.in, l.k, l.k}, l.in * l.k * l.k);
        add(prefix + "b", {l.out}, 0);
        break;
      case LayerKind::embedding:
        add(prefix + "table", {l.in, l.out}, l.out);
        break;
      case LayerKind::lstm:
        add(prefix + "Wx", {4 * l.out, l.in}, l.in);
        add(prefix + "Wh", {4 * l.out, l.out}, l.out);
        add(prefix + "b", {4 * l.out}, 0);
        break;
      default:
        break;
    }
    ++layer_ix;
  }
}

}  // namespace

ModelDesc build_desc(ModelKind kind, const ModelOptions& opts) {
  ModelDesc desc;
  desc.kind = kind;
  const int64_t L = opts.seq_len > 0 ? opts.seq_len : 256;
  const int64_t V = opts.vocab > 0 ? opts.vocab : 10004;
  const int64_t H = opts.hidden > 0 ? opts.hidden : 100;

  switch (kind) {
    case ModelKind::logreg:
      desc.layers = {{LayerKind::dense, 104, 1}};
      desc.input_shape = {104};
      desc.classes = 1;
      break;
    case ModelKind::fcnn:
      desc.layers = {{LayerKind::dense, 104, 50},
                     {LayerKind::relu},
                     {LayerKind::dense, 50, 10}};
      desc.input_shape = {104};
      desc.classes = 10;
      break;
    case ModelKind::mnist_cnn:
      // 28 -> conv 8x8 s2 p3 -> 14 -> pool 2 s2 -> 7 -> conv 4x4 -> 4;
      // 32*4*4 = 512 features, 26,010 parameters in total.
      desc.layers = {{LayerKind::conv, 1, 16, 8, 2, 3},
                     {LayerKind::relu},
                     {LayerKind::maxpool, 0, 0, 2, 2},
                     {LayerKind::conv, 16, 32, 4, 1, 0},
                     {LayerKind::relu},
                     {LayerKind::flatten},
                     {LayerKind::dense, 512, 32},
                     {LayerKind::relu},
                     {LayerKind::dense, 32, 10}};
      desc.input_shape = {1, 28, 28};
      desc.classes = 10;
      break;
    case ModelKind::cifar_cnn:
      desc.layers = {{LayerKind::conv, 3, 32, 3, 1, 1},
                     {LayerKind::relu},
                     {LayerKind::conv, 32, 32, 3, 1, 1},
                     {LayerKind::relu},
                     {LayerKind::avgpool, 0, 0, 2, 2},
                     {LayerKind::conv, 32, 64, 3, 1, 1},
                     {LayerKind::relu},
                     {LayerKind::conv, 64, 64, 3, 1, 1},
                     {LayerKind::relu},
                     {LayerKind::avgpool, 0, 0, 2, 2},
                     {LayerKind::conv, 64, 128, 3, 1, 1},
                     {LayerKind::relu},
                     {LayerKind::conv, 128, 128, 3, 1, 1},
                     {LayerKind::relu},
                     {LayerKind::avgpool, 0, 0, 2, 2},
                     {LayerKind::conv, 128, 256, 3, 1, 1},
                     {LayerKind::relu},
                     {LayerKind::conv, 256, 10, 3, 1, 1},
                     {LayerKind::global_avgpool}};
      desc.input_shape = {3, 32, 32};
      desc.classes = 10;
      break;
    case ModelKind::embed: {
      const int64_t E = opts.hidden > 0 ? opts.hidden : 16;
      desc.layers = {{LayerKind::embedding, V, E},
                     {LayerKind::seq_avgpool},
                     {LayerKind::dense, E, 2}};
      desc.input_shape = {L};
      desc.classes = 2;
      desc.token_input = true;
      break;
    }
    case ModelKind::lstm:
      desc.layers = {{LayerKind::embedding, V, H},
                     {LayerKind::lstm, H, H},
                     {LayerKind::seq_avgpool},
                     {LayerKind::dense, H, 2}};
      desc.input_shape = {L};
      desc.classes = 2;
      desc.token_input = true;
      break;
  }
  register_params(desc);
  return desc;
}

Var trace_forward(TapeBuilder& tb, const ModelDesc& desc, Var x,
                  const std::vector<Var>& params,
                  std::vector<LayerTap>* taps) {
  Var cur = x;
  size_t p = 0;
  int layer_ix = 0;
  // The benchmark LSTM always pools the full output sequence; the recurrence
  // keeps a running sum of hidden states, which is the same quantity as
  // materializing the sequence and average-pooling it.
  bool pending_seq_pool_done = false;

  for (const LayerSpec& l : desc.layers) {
    switch (l.kind) {
      case LayerKind::dense: {
        LayerTap tap;
        tap.layer = layer_ix;
        tap.kind = LayerKind::dense;
        tap.input = cur.id;
        tap.param_w = static_cast<int>(p);
        tap.param_b = static_cast<int>(p + 1);
        Var w = params[p++];
        Var b = params[p++];
        Var z = tb.add(tb.matmul(cur, w), b);
        tap.linear_out = z.id;
        if (taps) taps->push_back(tap);
        cur = z;
        break;
      }
      case LayerKind::conv: {
        LayerTap tap;
        tap.layer = layer_ix;
        tap.kind = LayerKind::conv;
        tap.input = cur.id;
        tap.param_w = static_cast<int>(p);
        tap.param_b = static_cast<int>(p + 1);
        Var w = params[p++];
        Var b = params[p++];
        const Shape sx = tb.shape_of(cur);
        const int64_t Ho =
            detail::conv_out_extent(sx[2], l.k, l.stride, l.pad);
        const int64_t Wo =
            detail::conv_out_extent(sx[3], l.k, l.stride, l.pad);
        Var cols = tb.im2col(cur, l.k, l.k, l.stride, l.pad);
        tap.patches = cols.id;
        Var wf = tb.reshape(w, {1, l.out, l.in * l.k * l.k});
        Var z = tb.reshape(tb.bmm(wf, cols), {sx[0], l.out, Ho, Wo});
        z = tb.add(z, tb.reshape(b, {l.out, 1, 1}));
        tap.linear_out = z.id;
        if (taps) taps->push_back(tap);
        cur = z;
        break;
      }
      case LayerKind::maxpool:
        cur = tb.pool2d(TapeBuilder::PoolOp::max, cur, l.k, l.stride);
        break;
      case LayerKind::avgpool:
        cur = tb.pool2d(TapeBuilder::PoolOp::avg, cur, l.k, l.stride);
        break;
      case LayerKind::global_avgpool: {
        const Shape s = tb.shape_of(cur);
        Var summed = tb.reduce_sum(tb.reduce_sum(cur, 3), 2);
        cur = tb.scale(summed, 1.0 / static_cast<double>(s[2] * s[3]));
        break;
      }
      case LayerKind::flatten: {
        const Shape s = tb.shape_of(cur);
        cur = tb.reshape(cur, {s[0], numel(s) / s[0]});
        break;
      }
      case LayerKind::relu:
        cur = tb.relu(cur);
        break;
      case LayerKind::embedding: {
        LayerTap tap;
        tap.layer = layer_ix;
        tap.kind = LayerKind::embedding;
        tap.ids = cur.id;
        tap.param_w = static_cast<int>(p);
        Var table = params[p++];
        Var g = tb.gather_rows(table, cur);
        tap.linear_out = g.id;
        if (taps) taps->push_back(tap);
        cur = g;
        break;
      }
      case LayerKind::seq_avgpool: {
        if (pending_seq_pool_done) {
          pending_seq_pool_done = false;
          break;  // already folded into the recurrence's running sum
        }
        const Shape s = tb.shape_of(cur);
        cur = tb.scale(tb.reduce_sum(cur, 1), 1.0 / static_cast<double>(s[1]));
        break;
      }
      case LayerKind::lstm: {
        Var wx = params[p++];
        Var wh = params[p++];
        Var b = params[p++];
        const Shape s = tb.shape_of(cur);  // (N, L, E)
        const int64_t N = s[0], L = s[1], Hd = l.out;
        Var wxT = tb.transpose(wx, {1, 0});
        Var whT = tb.transpose(wh, {1, 0});
        Var zero = tb.constant_scalar(0.0);
        Var h = tb.broadcast_to(zero, {N, Hd});
        Var c = tb.broadcast_to(zero, {N, Hd});
        Var sum = tb.broadcast_to(zero, {N, Hd});
        for (int64_t t = 0; t < L; ++t) {
          Var xt = tb.reshape(tb.slice_axis(cur, 1, t, 1), {N, s[2]});
          Var zx = tb.matmul(xt, wxT);
          Var zh = tb.matmul(h, whT);
          Var z = tb.add(tb.add(zx, zh), b);
          Var ig = tb.sigmoid(tb.slice_axis(z, 1, 0, Hd));
          Var fg = tb.sigmoid(tb.slice_axis(z, 1, Hd, Hd));
          Var gg = tb.tanh(tb.slice_axis(z, 1, 2 * Hd, Hd));
          Var og = tb.sigmoid(tb.slice_axis(z, 1, 3 * Hd, Hd));
          c = tb.add(tb.mul(fg, c), tb.mul(ig, gg));
          h = tb.mul(og, tb.tanh(c));
          sum = tb.add(sum, h);
        }
        cur = tb.scale(sum, 1.0 / static_cast<double>(L));
        pending_seq_pool_done = true;
        break;
      }
    }
    ++layer_ix;
  }
  return cur;
}

LstmState lstm_cell(TapeBuilder& tb, Var x_t, Var h, Var c, Var wx, Var wh,
                    Var b) {
  const int64_t Hd = tb.shape_of(h).back();
  Var z = tb.add(tb.add(tb.matmul(x_t, tb.transpose(wx, {1, 0})),
                        tb.matmul(h, tb.transpose(wh, {1, 0}))),
                 b);
  Var ig = tb.sigmoid(tb.slice_axis(z, 1, 0, Hd));
  Var fg = tb.sigmoid(tb.slice_axis(z, 1, Hd, Hd));
  Var gg = tb.tanh(tb.slice_axis(z, 1, 2 * Hd, Hd));
  Var og = tb.sigmoid(tb.slice_axis(z, 1, 3 * Hd, Hd));
  Var c2 = tb.add(tb.mul(fg, c), tb.mul(ig, gg));
  Var h2 = tb.mul(og, tb.tanh(c2));
  return {h2, c2};
}

namespace {

std::vector<Var> declare_params(TapeBuilder& tb, const ModelDesc& desc) {
  std::vector<Var> params;
  params.reserve(desc.param_shapes.size());
  for (size_t i = 0; i < desc.param_shapes.size(); ++i) {
    params.push_back(tb.param(desc.param_shapes[i], desc.param_names[i]));
  }
  return params;
}

}  // namespace

Tape per_example_loss_tape(const ModelDesc& desc) {
  TapeBuilder tb;
  Shape xshape = desc.input_shape;
  xshape.insert(xshape.begin(), 1);
  Var x = tb.input(xshape, "x");
  Var y = tb.input({1}, "y");
  std::vector<Var> params = declare_params(tb, desc);
  Var logits = trace_forward(tb, desc, x, params, nullptr);
  Var losses = tb.softmax_xent(logits, y, desc.classes);
  tb.mark_loss(tb.reduce_sum_all(losses));
  return tb.finish();
}

Tape batched_loss_tape(const ModelDesc& desc, int64_t batch, bool weighted,
                       std::vector<LayerTap>* taps) {
  TapeBuilder tb;
  Shape xshape = desc.input_shape;
  xshape.insert(xshape.begin(), batch);
  Var x = tb.input(xshape, "x");
  Var y = tb.input({batch}, "y");
  Var w{-1};
  if (weighted) w = tb.input({batch}, "w");
  std::vector<Var> params = declare_params(tb, desc);
  Var logits = trace_forward(tb, desc, x, params, taps);
  Var losses = tb.softmax_xent(logits, y, desc.classes);
  tb.mark_output(losses, "losses");
  tb.mark_output(logits, "logits");
  Var total = weighted ? tb.reduce_sum_all(tb.mul(losses, w))
                       : tb.reduce_sum_all(losses);
  tb.mark_loss(total);
  return tb.finish();
}

template <typename T>
Model<T> build_from_desc(const ModelDesc& desc, uint64_t seed) {
  Model<T> model;
  model.desc = desc;
  for (size_t p = 0; p < desc.param_shapes.size(); ++p) {
    const Shape& s = desc.param_shapes[p];
    RngState rng(seed, p);
    if (desc.param_fan_in[p] == 0) {  // biases start at zero
      model.params.push_back(Tensor<T>::zeros(s));
      continue;
    }
    const T bound = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(desc.param_fan_in[p])));
    model.params.push_back(uniform<T>(s, -bound, bound, rng));
  }
  return model;
}

template <typename T>
Model<T> build(ModelKind kind, uint64_t seed, const ModelOptions& opts) {
  return build_from_desc<T>(build_desc(kind, opts), seed);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell_eager(const Tensor<T>& x_t,
                                                const Tensor<T>& h,
                                                const Tensor<T>& c,
                                                const Tensor<T>& wx,
                                                const Tensor<T>& wh,
                                                const Tensor<T>& b) {
  using EB = EwBinaryKind;
  using EU = EwUnaryKind;
  const int64_t Hd = h.shape().back();
  auto z = ew_binary(EB::add,
                     ew_binary(EB::add, matmul(x_t, transpose(wx, {1, 0})),
                               matmul(h, transpose(wh, {1, 0}))),
                     b);
  auto block = [&](int64_t i) { return slice_axis(z, 1, i * Hd, Hd); };
  auto ig = ew_unary(EU::sigmoid, block(0));
  auto fg = ew_unary(EU::sigmoid, block(1));
  auto gg = ew_unary(EU::tanh, block(2));
  auto og = ew_unary(EU::sigmoid, block(3));
  auto c2 = ew_binary(EB::add, ew_binary(EB::mul, fg, c),
                      ew_binary(EB::mul, ig, gg));
  auto h2 = ew_binary(EB::mul, og, ew_unary(EU::tanh, c2));
  return {h2, c2};
}

template <typename T>
Tensor<T> lstm_forward_scan(const Model<T>& model, const Tensor<T>& ids) {
  const ModelDesc& desc = model.desc;
  if (desc.kind != ModelKind::lstm) {
    throw ContractError("lstm_forward_scan expects the lstm model");
  }
  const int64_t N = ids.dim(0), L = ids.dim(1);
  const Tensor<T>& table = model.params[0];
  const Tensor<T>& wx = model.params[1];
  const Tensor<T>& wh = model.params[2];
  const Tensor<T>& b = model.params[3];
  const Tensor<T>& fw = model.params[4];
  const Tensor<T>& fb = model.params[5];
  const int64_t Hd = wh.dim(1);

  Tensor<T> emb = gather_rows(table, ids);  // (N,L,E)
  Tensor<T> h = Tensor<T>::zeros({N, Hd});
  Tensor<T> c = Tensor<T>::zeros({N, Hd});
  Tensor<T> sum = Tensor<T>::zeros({N, Hd});
  for (int64_t t = 0; t < L; ++t) {
    Tensor<T> x_t =
        slice_axis(emb, 1, t, 1).reshaped({N, emb.dim(2)});
    auto [h2, c2] = lstm_cell_eager(x_t, h, c, wx, wh, b);
    h = h2;
    c = c2;
    sum = ew_binary(EwBinaryKind::add, sum, h);
  }
  Tensor<T> pooled = ew_binary(
      EwBinaryKind::mul, sum,
      Tensor<T>::scalar(static_cast<T>(1.0 / static_cast<double>(L))));
  return ew_binary(EwBinaryKind::add, matmul(pooled, fw), fb);
}

template <typename T>
Tensor<T> forward_logits(const Model<T>& model, const Tensor<T>& x) {
  const int64_t B = x.dim(0);
  TapeBuilder tb;
  Var xv = tb.input(x.shape(), "x");
  std::vector<Var> params = declare_params(tb, model.desc);
  Var logits = trace_forward(tb, model.desc, xv, params, nullptr);
  tb.mark_output(logits, "logits");
  (void)B;
  Executor<T> ex(std::make_shared<const Tape>(tb.finish()));
  return ex.run(model.params, {x})[0];
}

template <typename T>
std::pair<T, Tensor<T>> loss(const Model<T>& model, const Tensor<T>& x,
                             const Tensor<T>& labels) {
  Tensor<T> logits = forward_logits(model, x);
  Tensor<T> per_example = softmax_xent(logits, labels);
  T total = T(0);
  for (int64_t i = 0; i < per_example.size(); ++i) total += per_example.at(i);
  return {total, per_example};
}

template <typename T>
std::vector<int64_t> predict(const Model<T>& model, const Tensor<T>& x) {
  Tensor<T> logits = forward_logits(model, x);
  const int64_t B = logits.dim(0), K = logits.dim(1);
  std::vector<int64_t> out(B);
  for (int64_t i = 0; i < B; ++i) {
    if (K == 1) {
      out[i] = logits.at(i) > T(0) ? 1 : 0;
      continue;
    }
    int64_t best = 0;
    for (int64_t k = 1; k < K; ++k) {
      if (logits.at(i * K + k) > logits.at(i * K + best)) best = k;
    }
    out[i] = best;
  }
  return out;
}

#define PEGRAD_INSTANTIATE_MODELS(T)                                          \
  template Model<T> build<T>(ModelKind, uint64_t, const ModelOptions&);       \
  template Model<T> build_from_desc<T>(const ModelDesc&, uint64_t);           \
  template std::pair<Tensor<T>, Tensor<T>> lstm_cell_eager<T>(                \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
      const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> lstm_forward_scan<T>(const Model<T>&, const Tensor<T>&); \
  template Tensor<T> forward_logits<T>(const Model<T>&, const Tensor<T>&);    \
  template std::pair<T, Tensor<T>> loss<T>(const Model<T>&, const Tensor<T>&, \
                                           const Tensor<T>&);                 \
  template std::vector<int64_t> predict<T>(const Model<T>&, const Tensor<T>&);

PEGRAD_INSTANTIATE_MODELS(float)
PEGRAD_INSTANTIATE_MODELS(double)

#undef PEGRAD_INSTANTIATE_MODELS

}  // namespace pegrad::models
