#include <memory>

#include "doctest.h"
#include "oracles.hpp"
#include "pegrad/autodiff.hpp"
#include "pegrad/executor.hpp"
#include "pegrad/graph_opt.hpp"
#include "pegrad/vmap.hpp"

using namespace pegrad;

namespace {

std::vector<Tensor<double>> run(const Tape& tape,
                                const std::vector<Tensor<double>>& params,
                                const std::vector<Tensor<double>>& inputs) {
  Executor<double> ex(std::make_shared<const Tape>(tape));
  return ex.run(params, inputs);
}

Tensor<double> row(const Tensor<double>& batch, int64_t i) {
  Shape per(batch.shape().begin() + 1, batch.shape().end());
  const int64_t stride = numel(per);
  std::vector<double> v(batch.data() + i * stride,
                        batch.data() + (i + 1) * stride);
  return Tensor<double>::from(per, std::move(v));
}

}  // namespace

TEST_CASE("vmap of square maps elementwise") {
  Tape t = record([](TapeBuilder& tb) {
    Var x = tb.input({}, "x");
    tb.mark_output(tb.square(x), "y");
  });
  Tape b = vmap(t, 3, {InAxis::lead});
  auto out = run(b, {}, {Tensor<double>::from({3}, {1, 2, 3})});
  CHECK(out[0].shape() == Shape{3});
  CHECK(out[0].at(0) == 1);
  CHECK(out[0].at(1) == 4);
  CHECK(out[0].at(2) == 9);
}

TEST_CASE("vmap of a dense forward matches separate per-example calls") {
  Tape t = record([](TapeBuilder& tb) {
    Var x = tb.input({1, 5}, "x");
    Var w = tb.param({3, 5}, "w");
    Var b = tb.param({3}, "b");
    Var y = tb.tanh(tb.add(tb.matmul(x, tb.transpose(w, {1, 0})), b));
    tb.mark_output(y, "y");
  });
  RngState rng(2, 0);
  auto w = oracle::random_tensor({3, 5}, rng);
  auto b = oracle::random_tensor({3}, rng);
  auto X = oracle::random_tensor({4, 1, 5}, rng);

  Tape bt = vmap(t, 4, {InAxis::lead});
  auto batched = run(bt, {w, b}, {X})[0];
  CHECK(batched.shape() == Shape{4, 1, 3});
  for (int64_t i = 0; i < 4; ++i) {
    auto one = run(t, {w, b}, {row(X, i)})[0];
    for (int64_t j = 0; j < one.size(); ++j) {
      CHECK(batched.at(i * 3 + j) ==
            doctest::Approx(one.at(j)).epsilon(1e-9));
    }
  }
}

TEST_CASE("vmap node count does not depend on the batch extent") {
  Tape t = record([](TapeBuilder& tb) {
    Var x = tb.input({1, 8}, "x");
    Var w1 = tb.param({6, 8}, "w1");
    Var w2 = tb.param({2, 6}, "w2");
    Var h = tb.relu(tb.matmul(x, tb.transpose(w1, {1, 0})));
    Var z = tb.matmul(h, tb.transpose(w2, {1, 0}));
    Var labels = tb.input({1}, "y");
    tb.mark_loss(tb.reduce_sum_all(tb.softmax_xent(z, labels, 2)));
  });
  Tape g = grad(t);
  Tape b16 = vmap(g, 16, {InAxis::lead, InAxis::lead});
  Tape b256 = vmap(g, 256, {InAxis::lead, InAxis::lead});
  CHECK(b16.node_count() == b256.node_count());
}

TEST_CASE("pointwise agreement across primitive compositions") {
  // gather + reduce + conv composition, checked example by example
  Tape t = record([](TapeBuilder& tb) {
    Var ids = tb.input({1, 4}, "ids");
    Var table = tb.param({6, 3}, "table");
    Var e = tb.gather_rows(table, ids);          // (1,4,3)
    Var pooled = tb.reduce_sum(e, 1);            // (1,3)
    Var img = tb.input({1, 1, 4, 4}, "img");
    Var k = tb.param({2, 1, 3, 3}, "k");
    Var c = tb.conv2d(img, k, 1, 1);             // (1,2,4,4)
    Var flat = tb.reshape(c, {1, 32});
    Var joined = tb.add(tb.reduce_sum(flat, 1), tb.reduce_sum(pooled, 1));
    tb.mark_output(tb.tanh(joined), "y");
  });
  RngState rng(3, 0);
  auto table = oracle::random_tensor({6, 3}, rng);
  auto kern = oracle::random_tensor({2, 1, 3, 3}, rng);
  const int64_t B = 5;
  Tensor<double> ids = Tensor<double>::uninit({B, 1, 4});
  for (int64_t i = 0; i < ids.size(); ++i) {
    ids.mutable_data()[i] = std::floor(rng_uniform(rng, 0, 6));
  }
  auto imgs = oracle::random_tensor({B, 1, 1, 4, 4}, rng);

  Tape bt = vmap(t, B, {InAxis::lead, InAxis::lead});
  auto batched = run(bt, {table, kern}, {ids, imgs})[0];
  for (int64_t i = 0; i < B; ++i) {
    auto one = run(t, {table, kern}, {row(ids, i), row(imgs, i)})[0];
    CHECK(batched.at(i) == doctest::Approx(one.at(0)).epsilon(1e-9));
  }
}

TEST_CASE("vmap of a grad tape equals per-example grad runs") {
  Tape t = record([](TapeBuilder& tb) {
    Var x = tb.input({1, 6}, "x");
    Var y = tb.input({1}, "y");
    Var w = tb.param({2, 6}, "w");
    Var b = tb.param({2}, "b");
    Var z = tb.add(tb.matmul(x, tb.transpose(w, {1, 0})), b);
    tb.mark_loss(tb.reduce_sum_all(tb.softmax_xent(z, y, 2)));
  });
  Tape g = grad(t);
  RngState rng(4, 0);
  auto w = oracle::random_tensor({2, 6}, rng);
  auto b = oracle::random_tensor({2}, rng);
  const int64_t B = 4;
  auto X = oracle::random_tensor({B, 1, 6}, rng);
  Tensor<double> Y = Tensor<double>::uninit({B, 1});
  for (int64_t i = 0; i < B; ++i) {
    Y.mutable_data()[i] = i % 2;
  }

  Tape bg = vmap(g, B, {InAxis::lead, InAxis::lead});
  auto stacks = run(bg, {w, b}, {X, Y});
  REQUIRE(stacks.size() == 2);
  CHECK(stacks[0].shape() == Shape{B, 2, 6});
  for (int64_t i = 0; i < B; ++i) {
    auto one = run(g, {w, b}, {row(X, i), row(Y, i)});
    for (int64_t c = 0; c < one[0].size(); ++c) {
      CHECK(stacks[0].at(i * 12 + c) ==
            doctest::Approx(one[0].at(c)).epsilon(1e-9));
    }
    for (int64_t c = 0; c < one[1].size(); ++c) {
      CHECK(stacks[1].at(i * 2 + c) ==
            doctest::Approx(one[1].at(c)).epsilon(1e-9));
    }
  }
}

TEST_CASE("vmap embedding gradient uses the offset scatter") {
  // per-example gradient of an embedding lookup under vmap
  Tape t = record([](TapeBuilder& tb) {
    Var ids = tb.input({1, 3}, "ids");
    Var table = tb.param({5, 2}, "table");
    Var e = tb.gather_rows(table, ids);  // (1,3,2)
    tb.mark_loss(tb.reduce_sum_all(tb.square(e)));
  });
  Tape g = grad(t);
  const int64_t B = 3;
  Tape bg = vmap(g, B, {InAxis::lead});
  RngState rng(5, 0);
  auto table = oracle::random_tensor({5, 2}, rng);
  Tensor<double> ids = Tensor<double>::from({B, 1, 3},
                                            {0, 1, 1, 4, 2, 4, 3, 3, 3});
  auto stacks = run(bg, {table}, {ids});
  CHECK(stacks[0].shape() == Shape{B, 5, 2});
  for (int64_t i = 0; i < B; ++i) {
    auto one = run(g, {table}, {row(ids, i)});
    for (int64_t c = 0; c < 10; ++c) {
      CHECK(stacks[0].at(i * 10 + c) ==
            doctest::Approx(one[0].at(c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("vmap with an unbatched input broadcasts it") {
  Tape t = record([](TapeBuilder& tb) {
    Var x = tb.input({3}, "x");
    Var shift = tb.input({3}, "shift");
    tb.mark_output(tb.add(x, shift), "y");
  });
  Tape b = vmap(t, 2, {InAxis::lead, InAxis::unbatched});
  auto out = run(b, {},
                 {Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}),
                  Tensor<double>::from({3}, {10, 20, 30})});
  CHECK(out[0].shape() == Shape{2, 3});
  CHECK(out[0].at(0) == 11);
  CHECK(out[0].at(5) == 36);
}

TEST_CASE("vmap rejects a batched embedding table") {
  Tape t = record([](TapeBuilder& tb) {
    Var table = tb.input({4, 2}, "table");
    Var ids = tb.input({3}, "ids");
    tb.mark_output(tb.gather_rows(table, ids), "y");
  });
  CHECK_THROWS_AS(vmap(t, 2, {InAxis::lead, InAxis::lead}), UnsupportedError);
}

TEST_CASE("vmap output equality is preserved under graph optimization") {
  Tape t = record([](TapeBuilder& tb) {
    Var x = tb.input({1, 4}, "x");
    Var w = tb.param({4, 4}, "w");
    Var y = tb.relu(tb.add(tb.matmul(x, w), tb.constant_scalar(0.1)));
    tb.mark_output(y, "y");
  });
  Tape bt = vmap(t, 6, {InAxis::lead});
  RngState rng(6, 0);
  auto w = oracle::random_tensor({4, 4}, rng);
  auto X = oracle::random_tensor({6, 1, 4}, rng);
  auto eager = run(bt, {w}, {X});
  Executor<double> gex(optimize(bt));
  auto graphm = gex.run({w}, {X});
  CHECK(eager[0].same_bits(graphm[0]));
}
