#include <memory>
#include <thread>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "oracles.hpp"
#include "pegrad/autodiff.hpp"
#include "pegrad/executor.hpp"
#include "pegrad/tensor_ops.hpp"

using namespace pegrad;

namespace {

std::vector<Tensor<double>> run_eager(const Tape& tape,
                                      const std::vector<Tensor<double>>& params,
                                      const std::vector<Tensor<double>>& inputs) {
  Executor<double> ex(std::make_shared<const Tape>(tape));
  return ex.run(params, inputs);
}

}  // namespace

TEST_CASE("record replays identity") {
  Tape tape = record([](TapeBuilder& tb) {
    Var x = tb.input({3}, "x");
    tb.mark_output(x, "y");
  });
  auto x = Tensor<double>::from({3}, {1, 2, 3});
  auto out = run_eager(tape, {}, {x});
  CHECK(out[0].same_bits(x));
}

TEST_CASE("record of a dense layer replays eager evaluation bit for bit") {
  RngState rng(3, 0);
  auto x = oracle::random_tensor({2, 4}, rng);
  auto w = oracle::random_tensor({3, 4}, rng);
  auto b = oracle::random_tensor({3}, rng);

  Tape tape = record([&](TapeBuilder& tb) {
    Var xv = tb.input({2, 4}, "x");
    Var wv = tb.param({3, 4}, "w");
    Var bv = tb.param({3}, "b");
    Var y = tb.relu(tb.add(tb.matmul(xv, tb.transpose(wv, {1, 0})), bv));
    tb.mark_output(y, "y");
  });
  auto got = run_eager(tape, {w, b}, {x})[0];

  auto want = ew_unary(
      EwUnaryKind::relu,
      ew_binary(EwBinaryKind::add, matmul(x, transpose(w, {1, 0})), b));
  CHECK(got.same_bits(want));
}

TEST_CASE("grad: analytic examples") {
  // loss = sum(square(w)), w=[1,2] -> grad [2,4]
  Tape t1 = record([](TapeBuilder& tb) {
    Var w = tb.param({2}, "w");
    tb.mark_loss(tb.reduce_sum_all(tb.square(w)));
  });
  Tape g1 = grad(t1);
  auto r1 = run_eager(g1, {Tensor<double>::from({2}, {1, 2})}, {});
  CHECK(r1[0].at(0) == 2);
  CHECK(r1[0].at(1) == 4);

  // loss = sum(w*x), x=[3,4] -> grad [3,4]
  Tape t2 = record([](TapeBuilder& tb) {
    Var w = tb.param({2}, "w");
    Var x = tb.input({2}, "x");
    tb.mark_loss(tb.reduce_sum_all(tb.mul(w, x)));
  });
  auto r2 = run_eager(grad(t2), {Tensor<double>::from({2}, {5, 6})},
                      {Tensor<double>::from({2}, {3, 4})});
  CHECK(r2[0].at(0) == 3);
  CHECK(r2[0].at(1) == 4);
}

TEST_CASE("grad: non-scalar loss is a contract error") {
  Tape t = record([](TapeBuilder& tb) {
    Var w = tb.param({2}, "w");
    Var y = tb.square(w);
    tb.mark_output(y, "y");
  });
  CHECK_THROWS_AS(grad(t), ContractError);

  TapeBuilder tb;
  Var w = tb.param({2}, "w");
  CHECK_THROWS_AS(tb.mark_loss(w), ContractError);
}

TEST_CASE("grad: missing VJP rule names the op kind") {
  Tape t = record([](TapeBuilder& tb) {
    Var w = tb.param({2, 3}, "w");
    Var g = tb.param({2}, "g");
    Var mg = tb.max_grad(w, g, 1);
    tb.mark_loss(tb.reduce_sum_all(mg));
  });
  CHECK(!has_vjp_rule(OpKind::kMaxGrad));
  CHECK_THROWS_WITH_AS(grad(t), doctest::Contains("max_grad"),
                       UnsupportedError);
}

TEST_CASE("matmul VJP is the textbook identity") {
  RngState rng(5, 0);
  auto a = oracle::random_tensor({3, 4}, rng);
  auto b = oracle::random_tensor({4, 2}, rng);
  Tape t = record([&](TapeBuilder& tb) {
    Var av = tb.param({3, 4}, "a");
    Var bv = tb.param({4, 2}, "b");
    tb.mark_loss(tb.reduce_sum_all(tb.matmul(av, bv)));
  });
  auto grads = run_eager(grad(t), {a, b}, {});
  // cotangent of the product is all-ones: dA = 1 B^T, dB = A^T 1
  auto ones = Tensor<double>::full({3, 2}, 1.0);
  auto want_da = matmul(ones, transpose(b, {1, 0}));
  auto want_db = matmul(transpose(a, {1, 0}), ones);
  CHECK(oracle::allclose(grads[0], want_da, 1e-12, 1e-12));
  CHECK(oracle::allclose(grads[1], want_db, 1e-12, 1e-12));
}

TEST_CASE("relu VJP masks by positivity") {
  Tape t = record([](TapeBuilder& tb) {
    Var w = tb.param({4}, "w");
    tb.mark_loss(tb.reduce_sum_all(tb.relu(w)));
  });
  auto g = run_eager(grad(t), {Tensor<double>::from({4}, {-1, 0, 0.5, 2})}, {});
  CHECK(g[0].at(0) == 0);
  CHECK(g[0].at(1) == 0);
  CHECK(g[0].at(2) == 1);
  CHECK(g[0].at(3) == 1);
}

namespace {

// Generic per-primitive gradient check: builds loss = sum(weights * f(w)),
// compares AD against central differences on every coordinate.
void check_primitive_grad(
    const std::string& what, const Shape& wshape,
    const std::function<Var(TapeBuilder&, Var)>& body, double lo = -1,
    double hi = 1) {
  RngState rng(std::hash<std::string>{}(what) & 0xffff, 0);
  Tape t = record([&](TapeBuilder& tb) {
    Var w = tb.param(wshape, "w");
    Var y = body(tb, w);
    // random fixed cotangent, folded in as a constant weight
    std::vector<double> cw(numel(tb.shape_of(y)));
    RngState crng(7, 1);
    for (auto& v : cw) v = rng_uniform(crng, -1, 1);
    Var weights = tb.constant(tb.shape_of(y), cw);
    tb.mark_loss(tb.reduce_sum_all(tb.mul(y, weights)));
  });
  Tape gt = grad(t);
  auto w = oracle::random_tensor(wshape, rng, lo, hi);
  auto ad = run_eager(gt, {w}, {})[0];
  for (int64_t c = 0; c < ad.size(); ++c) {
    const double fd = oracle::fd_coordinate(t, {w}, {}, 0, c);
    INFO(what, " coord ", c);
    CHECK(oracle::grad_matches(ad.at(c), fd, 1e-5));
  }
}

}  // namespace

TEST_CASE("every primitive's VJP matches central finite differences") {
  using TB = TapeBuilder;
  check_primitive_grad("add_bcast", {2, 3}, [](TB& tb, Var w) {
    return tb.add(w, tb.constant({3}, {0.3, -0.2, 0.7}));
  });
  check_primitive_grad("sub", {2, 3}, [](TB& tb, Var w) {
    return tb.sub(tb.constant({1}, {0.4}), w);
  });
  check_primitive_grad("mul_bcast", {2, 3}, [](TB& tb, Var w) {
    return tb.mul(w, tb.constant({2, 1}, {1.5, -0.5}));
  });
  check_primitive_grad("div", {2, 2}, [](TB& tb, Var w) {
    return tb.div(tb.constant({2, 2}, {1, 2, 3, 4}), w);
  }, 0.5, 1.5);
  check_primitive_grad("maximum", {5}, [](TB& tb, Var w) {
    return tb.maximum(w, tb.constant({5}, {0.1, -0.4, 0.2, 0.9, -0.9}));
  });
  check_primitive_grad("neg", {4}, [](TB& tb, Var w) { return tb.neg(w); });
  check_primitive_grad("exp", {4}, [](TB& tb, Var w) { return tb.exp(w); });
  check_primitive_grad("log", {4}, [](TB& tb, Var w) { return tb.log(w); },
                       0.2, 2.0);
  check_primitive_grad("tanh", {4}, [](TB& tb, Var w) { return tb.tanh(w); });
  check_primitive_grad("sigmoid", {4},
                       [](TB& tb, Var w) { return tb.sigmoid(w); });
  check_primitive_grad("relu", {6}, [](TB& tb, Var w) { return tb.relu(w); });
  check_primitive_grad("square", {4},
                       [](TB& tb, Var w) { return tb.square(w); });
  check_primitive_grad("sqrt", {4}, [](TB& tb, Var w) { return tb.sqrt(w); },
                       0.3, 2.0);
  check_primitive_grad("broadcast", {2, 1}, [](TB& tb, Var w) {
    return tb.broadcast_to(w, {2, 4});
  });
  check_primitive_grad("reshape_transpose", {2, 3}, [](TB& tb, Var w) {
    return tb.transpose(tb.reshape(w, {3, 2}), {1, 0});
  });
  check_primitive_grad("slice", {2, 5}, [](TB& tb, Var w) {
    return tb.slice_axis(w, 1, 1, 3);
  });
  check_primitive_grad("pad", {2, 3}, [](TB& tb, Var w) {
    return tb.pad_axis(w, 1, 2, 7);
  });
  check_primitive_grad("matmul_lhs", {3, 4}, [](TB& tb, Var w) {
    std::vector<double> c(8);
    for (size_t i = 0; i < c.size(); ++i) c[i] = 0.1 * (i + 1);
    return tb.matmul(w, tb.constant({4, 2}, c));
  });
  check_primitive_grad("matmul_rhs", {4, 2}, [](TB& tb, Var w) {
    std::vector<double> c(12);
    for (size_t i = 0; i < c.size(); ++i) c[i] = 0.05 * (i + 1) - 0.3;
    return tb.matmul(tb.constant({3, 4}, c), w);
  });
  check_primitive_grad("bmm", {2, 2, 3}, [](TB& tb, Var w) {
    std::vector<double> c(2 * 3 * 2);
    for (size_t i = 0; i < c.size(); ++i) c[i] = 0.1 * (i % 5) - 0.2;
    return tb.bmm(w, tb.constant({2, 3, 2}, c));
  });
  check_primitive_grad("bmm_broadcast_lhs", {1, 2, 3}, [](TB& tb, Var w) {
    std::vector<double> c(2 * 3 * 2);
    for (size_t i = 0; i < c.size(); ++i) c[i] = 0.07 * (i % 7) - 0.2;
    return tb.bmm(w, tb.constant({2, 3, 2}, c));
  });
  check_primitive_grad("reduce_sum", {3, 4}, [](TB& tb, Var w) {
    return tb.reduce_sum(w, 1);
  });
  check_primitive_grad("reduce_max", {3, 4}, [](TB& tb, Var w) {
    return tb.reduce_max(w, 1);
  });
  check_primitive_grad("im2col", {1, 2, 4, 4}, [](TB& tb, Var w) {
    return tb.im2col(w, 2, 2, 1, 0);
  });
  check_primitive_grad("col2im", {1, 8, 9}, [](TB& tb, Var w) {
    return tb.col2im(w, 2, 4, 4, 2, 2, 1, 0);
  });
  check_primitive_grad("conv2d", {2, 1, 4, 4}, [](TB& tb, Var w) {
    std::vector<double> c(1 * 1 * 3 * 3);
    for (size_t i = 0; i < c.size(); ++i) c[i] = 0.2 * (i % 3) - 0.15;
    return tb.conv2d(w, tb.constant({1, 1, 3, 3}, c), 1, 1);
  });
  check_primitive_grad("conv2d_weights", {2, 1, 3, 3}, [](TB& tb, Var w) {
    std::vector<double> c(1 * 1 * 4 * 4);
    for (size_t i = 0; i < c.size(); ++i) c[i] = 0.1 * (i % 4) - 0.1;
    return tb.conv2d(tb.constant({1, 1, 4, 4}, c), w, 1, 0);
  });
  check_primitive_grad("maxpool", {1, 2, 4, 4}, [](TB& tb, Var w) {
    return tb.pool2d(TB::PoolOp::max, w, 2, 2);
  });
  check_primitive_grad("avgpool", {1, 2, 4, 4}, [](TB& tb, Var w) {
    return tb.pool2d(TB::PoolOp::avg, w, 2, 1);
  });
  check_primitive_grad("gather_scatter", {5, 3}, [](TB& tb, Var w) {
    Var ids = tb.constant({2, 3}, {0, 2, 4, 2, 1, 0});
    return tb.gather_rows(w, ids);
  });
  check_primitive_grad("scatter_fwd", {4, 2}, [](TB& tb, Var w) {
    Var ids = tb.constant({4}, {1, 0, 1, 2});
    return tb.scatter_add(w, ids, 3);
  });
  check_primitive_grad("softmax_xent", {2, 3}, [](TB& tb, Var w) {
    Var labels = tb.constant({2}, {1, 2});
    return tb.softmax_xent(w, labels, 3);
  });
  check_primitive_grad("softmax_xent_binary", {2, 1}, [](TB& tb, Var w) {
    Var labels = tb.constant({2}, {1, 0});
    return tb.softmax_xent(w, labels, 1);
  });
}

TEST_CASE("grad works through shared subexpressions") {
  // loss = sum((w*w) * (w+1)) exercises multi-consumer accumulation order
  Tape t = record([](TapeBuilder& tb) {
    Var w = tb.param({3}, "w");
    Var a = tb.mul(w, w);
    Var b = tb.add(w, tb.constant_scalar(1.0));
    tb.mark_loss(tb.reduce_sum_all(tb.mul(a, b)));
  });
  auto w = Tensor<double>::from({3}, {0.5, -1.5, 2.0});
  auto ad = run_eager(grad(t), {w}, {})[0];
  for (int64_t c = 0; c < 3; ++c) {
    // d/dw [w^3 + w^2] = 3w^2 + 2w
    const double want = 3 * w.at(c) * w.at(c) + 2 * w.at(c);
    CHECK(ad.at(c) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("unreachable parameter gets a zero gradient") {
  Tape t = record([](TapeBuilder& tb) {
    Var w = tb.param({2}, "w");
    Var dead = tb.param({3}, "dead");
    (void)dead;
    tb.mark_loss(tb.reduce_sum_all(tb.square(w)));
  });
  auto grads = run_eager(grad(t), {Tensor<double>::from({2}, {1, 2}),
                                   Tensor<double>::zeros({3})},
                         {});
  CHECK(grads[1].shape() == Shape{3});
  CHECK(max_abs(grads[1]) == 0);
}

TEST_CASE("concurrent grad executions on one shared tape") {
  Tape t = record([](TapeBuilder& tb) {
    Var w = tb.param({8, 8}, "w");
    Var x = tb.input({8, 8}, "x");
    tb.mark_loss(tb.reduce_sum_all(tb.tanh(tb.matmul(w, x))));
  });
  auto shared = std::make_shared<const Tape>(grad(t));
  RngState rng(71, 0);
  auto w = oracle::random_tensor({8, 8}, rng);
  auto x = oracle::random_tensor({8, 8}, rng);

  std::vector<Tensor<double>> r1, r2;
  std::thread t1([&] {
    Executor<double> ex(shared);
    r1 = ex.run({w}, {x});
  });
  std::thread t2([&] {
    Executor<double> ex(shared);
    r2 = ex.run({w}, {x});
  });
  t1.join();
  t2.join();
  CHECK(r1[0].same_bits(r2[0]));
}
