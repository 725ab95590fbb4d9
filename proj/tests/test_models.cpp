#include <memory>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "oracles.hpp"
#include "pegrad/autodiff.hpp"
#include "pegrad/executor.hpp"
#include "pegrad/models.hpp"
#include "pegrad/tensor_ops.hpp"

using namespace pegrad;
using namespace pegrad::models;

namespace {

Tensor<double> random_ids(Shape shape, int64_t vocab, RngState& rng) {
  Tensor<double> t = Tensor<double>::uninit(shape);
  for (int64_t i = 0; i < t.size(); ++i) {
    t.mutable_data()[i] = std::floor(rng_uniform(rng, 0, vocab));
  }
  return t;
}

}  // namespace

TEST_CASE("parameter counts derived from the architecture tables") {
  // The 105 (logreg), 26,010 (MNIST CNN), 605,226 (CIFAR10 CNN), 160,098
  // (embedding) and 1,081,002 (LSTM) totals; the FCNN table rows give 5,760.
  CHECK(build_desc(ModelKind::logreg).param_count() == 105);
  CHECK(build_desc(ModelKind::fcnn).param_count() == 5760);
  CHECK(build_desc(ModelKind::mnist_cnn).param_count() == 26010);
  CHECK(build_desc(ModelKind::cifar_cnn).param_count() == 605226);
  CHECK(build_desc(ModelKind::embed).param_count() == 160098);
  CHECK(build_desc(ModelKind::lstm).param_count() == 1081002);
}

TEST_CASE("layer-by-layer shape conformance") {
  // mnist: 28 -> 14 -> 7 -> 4, flattened to the table's 512 features
  {
    ModelDesc desc = build_desc(ModelKind::mnist_cnn);
    std::vector<LayerTap> taps;
    Tape t = batched_loss_tape(desc, 3, false, &taps);
    REQUIRE(taps.size() == 4);  // two convs + two dense layers
    CHECK(t.nodes[taps[0].linear_out].shape == Shape{3, 16, 14, 14});
    CHECK(t.nodes[taps[1].linear_out].shape == Shape{3, 32, 4, 4});
    CHECK(t.nodes[taps[2].input].shape == Shape{3, 512});
    CHECK(t.nodes[taps[2].linear_out].shape == Shape{3, 32});
    CHECK(t.nodes[taps[3].linear_out].shape == Shape{3, 10});
  }
  // cifar: 32 -> 16 -> 8 -> 4 spatially, global pool to (B,10)
  {
    ModelDesc desc = build_desc(ModelKind::cifar_cnn);
    std::vector<LayerTap> taps;
    Tape t = batched_loss_tape(desc, 2, false, &taps);
    REQUIRE(taps.size() == 8);
    CHECK(t.nodes[taps[1].linear_out].shape == Shape{2, 32, 32, 32});
    CHECK(t.nodes[taps[2].linear_out].shape == Shape{2, 64, 16, 16});
    CHECK(t.nodes[taps[4].linear_out].shape == Shape{2, 128, 8, 8});
    CHECK(t.nodes[taps[7].linear_out].shape == Shape{2, 10, 4, 4});
    CHECK(t.nodes[t.output_id("logits")].shape == Shape{2, 10});
  }
  // fcnn 104 -> 50 -> 10
  {
    ModelDesc desc = build_desc(ModelKind::fcnn);
    std::vector<LayerTap> taps;
    Tape t = batched_loss_tape(desc, 5, false, &taps);
    CHECK(t.nodes[taps[0].linear_out].shape == Shape{5, 50});
    CHECK(t.nodes[taps[1].linear_out].shape == Shape{5, 10});
  }
}

TEST_CASE("embed model forward: (2,256) int batch -> (2,2) logits") {
  auto model = build<double>(ModelKind::embed, 11);
  RngState rng(1, 0);
  auto ids = random_ids({2, 256}, 10004, rng);
  auto logits = forward_logits(model, ids);
  CHECK(logits.shape() == Shape{2, 2});
  CHECK(all_finite(logits));
}

TEST_CASE("initialization determinism") {
  auto a = build<double>(ModelKind::fcnn, 7);
  auto b = build<double>(ModelKind::fcnn, 7);
  auto c = build<double>(ModelKind::fcnn, 8);
  for (size_t p = 0; p < a.params.size(); ++p) {
    CHECK(a.params[p].same_bits(b.params[p]));
  }
  CHECK_FALSE(a.params[0].same_bits(c.params[0]));
}

TEST_CASE("lstm_cell: zero weights and state give zero h") {
  TapeBuilder tb;
  Var x = tb.input({1, 3}, "x");
  Var h0 = tb.constant({1, 2}, {0, 0});
  Var c0 = tb.constant({1, 2}, {0, 0});
  Var wx = tb.constant({8, 3}, std::vector<double>(24, 0.0));
  Var wh = tb.constant({8, 2}, std::vector<double>(16, 0.0));
  Var b = tb.constant({8}, std::vector<double>(8, 0.0));
  LstmState s = lstm_cell(tb, x, h0, c0, wx, wh, b);
  tb.mark_output(s.h, "h");
  tb.mark_output(s.c, "c");
  Executor<double> ex(std::make_shared<const Tape>(tb.finish()));
  auto out = ex.run({}, {Tensor<double>::from({1, 3}, {1, -2, 3})});
  CHECK(max_abs(out[0]) == 0.0);
  CHECK(max_abs(out[1]) == 0.0);
}

TEST_CASE("1-unit lstm_cell matches a scalar recurrence oracle") {
  // hand-set gates, scalar math in long double
  const double wxi = 0.5, wxf = -0.3, wxg = 0.8, wxo = 0.2;
  const double whi = 0.1, whf = 0.4, whg = -0.6, who = 0.7;
  const double bi = 0.05, bf = -0.1, bg = 0.2, bo = 0.0;
  const double x0 = 0.9, h0 = 0.3, c0 = -0.2;

  auto sigmoid = [](long double v) { return 1.0L / (1.0L + expl(-v)); };
  const long double i = sigmoid(wxi * x0 + whi * h0 + bi);
  const long double f = sigmoid(wxf * x0 + whf * h0 + bf);
  const long double g = tanhl(wxg * x0 + whg * h0 + bg);
  const long double o = sigmoid(wxo * x0 + who * h0 + bo);
  const long double c1 = f * c0 + i * g;
  const long double h1 = o * tanhl(c1);

  auto xt = Tensor<double>::from({1, 1}, {x0});
  auto h = Tensor<double>::from({1, 1}, {h0});
  auto c = Tensor<double>::from({1, 1}, {c0});
  auto wx = Tensor<double>::from({4, 1}, {wxi, wxf, wxg, wxo});
  auto wh = Tensor<double>::from({4, 1}, {whi, whf, whg, who});
  auto b = Tensor<double>::from({4}, {bi, bf, bg, bo});
  auto [h2, c2] = lstm_cell_eager(xt, h, c, wx, wh, b);
  CHECK(h2.at(0) == doctest::Approx(static_cast<double>(h1)).epsilon(1e-14));
  CHECK(c2.at(0) == doctest::Approx(static_cast<double>(c1)).epsilon(1e-14));
}

TEST_CASE("gradient through 3 unrolled lstm steps matches finite differences") {
  const int64_t E = 3, H = 2;
  Tape t = record([&](TapeBuilder& tb) {
    Var x = tb.input({3, 1, E}, "x");  // three time steps
    Var wx = tb.param({4 * H, E}, "wx");
    Var wh = tb.param({4 * H, H}, "wh");
    Var b = tb.param({4 * H}, "b");
    Var zero = tb.constant_scalar(0.0);
    Var h = tb.broadcast_to(zero, {1, H});
    Var c = tb.broadcast_to(zero, {1, H});
    for (int64_t step = 0; step < 3; ++step) {
      Var xt = tb.reshape(tb.slice_axis(x, 0, step, 1), {1, E});
      LstmState s = lstm_cell(tb, xt, h, c, wx, wh, b);
      h = s.h;
      c = s.c;
    }
    tb.mark_loss(tb.reduce_sum_all(tb.square(h)));
  });
  Tape g = grad(t);
  RngState rng(23, 0);
  auto x = oracle::random_tensor({3, 1, E}, rng);
  std::vector<Tensor<double>> params = {
      oracle::random_tensor({4 * H, E}, rng),
      oracle::random_tensor({4 * H, H}, rng),
      oracle::random_tensor({4 * H}, rng)};
  Executor<double> ex(std::make_shared<const Tape>(g));
  auto ad = ex.run(params, {x});
  RngState pick(3, 1);
  for (size_t p = 0; p < params.size(); ++p) {
    for (int rep = 0; rep < 7; ++rep) {
      const int64_t c =
          static_cast<int64_t>(rng_uniform(pick, 0, params[p].size()));
      const double fd = oracle::fd_coordinate(t, params, {x}, p, c);
      INFO("param ", p, " coord ", c);
      CHECK(oracle::grad_matches(ad[p].at(c), fd, 1e-5));
    }
  }
}

TEST_CASE("unrolled static lstm equals the scan-style dynamic execution") {
  ModelOptions small;
  small.seq_len = 6;
  small.vocab = 50;
  small.hidden = 5;
  auto model = build<double>(ModelKind::lstm, 3, small);
  RngState rng(9, 0);
  auto ids = random_ids({4, 6}, 50, rng);

  auto unrolled = forward_logits(model, ids);  // static tape
  auto scanned = lstm_forward_scan(model, ids);
  CHECK(unrolled.shape() == scanned.shape());
  CHECK(oracle::allclose(unrolled, scanned, 1e-9, 1e-12));
}

TEST_CASE("model loss: uniform, sharp and out-of-range labels") {
  auto model = build<double>(ModelKind::fcnn, 5);
  RngState rng(2, 0);
  auto x = oracle::random_tensor({4, 104}, rng);
  auto labels = Tensor<double>::from({4}, {0, 1, 1, 0});
  auto [total, per] = loss(model, x, labels);
  CHECK(per.shape() == Shape{4});
  double sum = 0;
  for (int64_t i = 0; i < 4; ++i) sum += per.at(i);
  CHECK(total == doctest::Approx(sum).epsilon(1e-12));

  CHECK_THROWS_AS(loss(model, x, Tensor<double>::from({4}, {0, 1, 12, 0})),
                  IndexError);
}

TEST_CASE("model names round-trip") {
  for (auto kind : {ModelKind::logreg, ModelKind::fcnn, ModelKind::mnist_cnn,
                    ModelKind::cifar_cnn, ModelKind::embed, ModelKind::lstm}) {
    CHECK(model_kind_from_name(model_name(kind)) == kind);
  }
  CHECK_THROWS_AS(model_kind_from_name("resnet"), ConfigError);
}

TEST_CASE("replay fidelity: fcnn tape equals hand-composed eager forward") {
  auto model = build<double>(ModelKind::fcnn, 21);
  RngState rng(4, 0);
  auto x = oracle::random_tensor({3, 104}, rng);
  auto got = forward_logits(model, x);

  using EB = EwBinaryKind;
  using EU = EwUnaryKind;
  auto h = ew_unary(EU::relu, ew_binary(EB::add, matmul(x, model.params[0]),
                                        model.params[1]));
  auto want = ew_binary(EB::add, matmul(h, model.params[2]), model.params[3]);
  CHECK(got.same_bits(want));
}
