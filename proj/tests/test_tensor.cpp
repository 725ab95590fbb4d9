#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "pegrad/tensor_ops.hpp"

using namespace pegrad;

namespace {
Tensor<double> T1(std::vector<double> v) {
  const int64_t n = static_cast<int64_t>(v.size());
  return Tensor<double>::from({n}, std::move(v));
}
}  // namespace

TEST_CASE("ew_binary basics") {
  auto r = ew_binary(EwBinaryKind::add, T1({1, 2}), T1({3, 4}));
  CHECK(r.at(0) == 4);
  CHECK(r.at(1) == 6);

  auto m = ew_binary(EwBinaryKind::mul,
                     Tensor<double>::from({2, 2}, {1, 2, 3, 4}), T1({10}));
  CHECK(m.shape() == Shape{2, 2});
  CHECK(m.at(0) == 10);
  CHECK(m.at(1) == 20);
  CHECK(m.at(2) == 30);
  CHECK(m.at(3) == 40);

  // div by zero produces +inf, left to the caller's finiteness checks
  auto d = ew_binary(EwBinaryKind::div, T1({1, 2}), T1({0, 1}));
  CHECK(d.at(0) == 1.0 / 0.0);
  CHECK(d.at(1) == 2.0);
  CHECK_FALSE(all_finite(d));
  CHECK(d.at(0) == std::numeric_limits<double>::infinity());
}

TEST_CASE("ew_binary non-broadcastable shapes") {
  CHECK_THROWS_AS(ew_binary(EwBinaryKind::add,
                            Tensor<double>::zeros({2, 3}),
                            Tensor<double>::zeros({2, 2})),
                  ShapeError);
}

TEST_CASE("ew_binary broadcasting equals materializing oracle") {
  RngState rng(7, 0);
  const std::vector<std::pair<Shape, Shape>> cases = {
      {{2, 3}, {3}},    {{4, 1, 3}, {2, 1}}, {{5}, {}},
      {{1, 4}, {3, 1}}, {{2, 2, 2}, {2}},    {{3, 1}, {1, 5}},
  };
  for (const auto& [sa, sb] : cases) {
    auto a = oracle::random_tensor(sa, rng);
    auto b = oracle::random_tensor(sb, rng);
    for (auto kind : {EwBinaryKind::add, EwBinaryKind::sub, EwBinaryKind::mul,
                      EwBinaryKind::max}) {
      auto got = ew_binary(kind, a, b);
      auto want = oracle::broadcast_binary(
          [&](double x, double y) {
            switch (kind) {
              case EwBinaryKind::add: return x + y;
              case EwBinaryKind::sub: return x - y;
              case EwBinaryKind::mul: return x * y;
              default: return std::max(x, y);
            }
          },
          a, b);
      CHECK(got.shape() == want.shape());
      CHECK(oracle::max_abs_diff(got, want) == 0.0);
    }
  }
}

TEST_CASE("ew_unary basics and domain errors") {
  auto r = ew_unary(EwUnaryKind::relu, T1({-1, 0, 2}));
  CHECK(r.at(0) == 0);
  CHECK(r.at(1) == 0);
  CHECK(r.at(2) == 2);

  CHECK(ew_unary(EwUnaryKind::sigmoid, T1({0})).at(0) == 0.5);

  // high-precision scalar value for tanh(0.5)
  CHECK(ew_unary(EwUnaryKind::tanh, T1({0.5})).at(0) ==
        doctest::Approx(0.46211715726000974).epsilon(1e-15));

  CHECK_THROWS_WITH_AS(ew_unary(EwUnaryKind::log, T1({1, 0})),
                       doctest::Contains("index 1"), DomainError);
  CHECK_THROWS_AS(ew_unary(EwUnaryKind::sqrt, T1({-0.5})), DomainError);
}

TEST_CASE("matmul identities and oracle") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).same_bits(m));

  auto row = Tensor<double>::from({1, 2}, {1, 2});
  auto col = Tensor<double>::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).at(0) == 11);

  RngState rng(11, 0);
  auto a = oracle::random_tensor({4, 5}, rng);
  auto b = oracle::random_tensor({5, 3}, rng);
  CHECK(oracle::allclose(matmul(a, b), oracle::matmul(a, b), 1e-12, 1e-12));

  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul associativity within 1e-9 (extents <= 8)") {
  RngState rng(13, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const int64_t m = 2 + trial, k = 3 + trial, n = 8 - trial, p = 4;
    auto a = oracle::random_tensor({m, k}, rng);
    auto b = oracle::random_tensor({k, n}, rng);
    auto c = oracle::random_tensor({n, p}, rng);
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    CHECK(oracle::allclose(left, right, 1e-9, 1e-9));
  }
}

TEST_CASE("reduce") {
  auto m = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto s = reduce(ReduceKind::sum, m, {0, 1});
  CHECK(s.shape().empty());
  CHECK(s.at(0) == 10);

  CHECK(reduce(ReduceKind::mean, T1({2, 4}), {0}).at(0) == 3);

  auto mx = reduce(ReduceKind::max, Tensor<double>::from({2, 2}, {1, 5, 7, 2}),
                   {1});
  CHECK(mx.shape() == Shape{2});
  CHECK(mx.at(0) == 5);
  CHECK(mx.at(1) == 7);

  CHECK_THROWS_AS(reduce(ReduceKind::sum, m, {2}), ShapeError);
}

TEST_CASE("conv2d trivial cases") {
  auto x = Tensor<double>::from({1, 1, 1, 1}, {5});
  auto w = Tensor<double>::from({1, 1, 1, 1}, {3});
  CHECK(conv2d(x, w, 1, 0).at(0) == 15);

  auto ones3 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto ones2 = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto out = conv2d(ones3, ones2, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(out.at(i) == 4);

  // non-integral output extent
  CHECK_THROWS_AS(conv2d(Tensor<double>::zeros({1, 1, 5, 5}),
                         Tensor<double>::zeros({1, 1, 2, 2}), 2, 0),
                  ShapeError);
}

TEST_CASE("conv2d matches direct-sum oracle") {
  RngState rng(17, 0);
  auto x = oracle::random_tensor({2, 3, 5, 5}, rng);
  auto w = oracle::random_tensor({4, 3, 3, 3}, rng);
  for (auto [stride, pad] : {std::pair<int64_t, int64_t>{1, 0}, {2, 1}, {1, 1}}) {
    auto got = conv2d(x, w, stride, pad);
    auto want = oracle::conv2d(x, w, stride, pad);
    CHECK(got.shape() == want.shape());
    CHECK(oracle::allclose(got, want, 1e-10, 1e-12));
  }
}

TEST_CASE("conv2d oracle property on small random extents") {
  RngState rng(19, 0);
  for (int trial = 0; trial < 8; ++trial) {
    const int64_t B = 1 + static_cast<int64_t>(rng_uniform(rng, 0, 2));
    const int64_t C = 1 + static_cast<int64_t>(rng_uniform(rng, 0, 3));
    const int64_t D = 1 + static_cast<int64_t>(rng_uniform(rng, 0, 3));
    const int64_t k = 1 + static_cast<int64_t>(rng_uniform(rng, 0, 3));
    const int64_t H = k + static_cast<int64_t>(rng_uniform(rng, 0, 6 - k + 1));
    auto x = oracle::random_tensor({B, C, H, H}, rng);
    auto w = oracle::random_tensor({D, C, k, k}, rng);
    auto got = conv2d(x, w, 1, 0);
    auto want = oracle::conv2d(x, w, 1, 0);
    CHECK(oracle::allclose(got, want, 1e-10, 1e-12));
  }
}

TEST_CASE("pool2d") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(pool2d(PoolKind::avg, x, 2, 2).at(0) == 2.5);
  CHECK(pool2d(PoolKind::max, x, 2, 2).at(0) == 4);

  RngState rng(23, 0);
  auto r = oracle::random_tensor({1, 1, 4, 4}, rng);
  CHECK(oracle::allclose(pool2d(PoolKind::avg, r, 2, 2),
                         oracle::pool2d(false, r, 2, 2), 1e-12, 1e-12));
  CHECK(oracle::allclose(pool2d(PoolKind::max, r, 2, 2),
                         oracle::pool2d(true, r, 2, 2), 1e-12, 1e-12));
}

TEST_CASE("gather_rows") {
  auto table = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto out = gather_rows(table, Tensor<double>::from({1, 1}, {1}));
  CHECK(out.shape() == Shape{1, 1, 2});
  CHECK(out.at(0) == 3);
  CHECK(out.at(1) == 4);

  auto zeros = gather_rows(table, Tensor<double>::zeros({2, 3}));
  for (int64_t i = 0; i < zeros.size(); i += 2) {
    CHECK(zeros.at(i) == 1);
    CHECK(zeros.at(i + 1) == 2);
  }

  CHECK_THROWS_WITH_AS(gather_rows(table, Tensor<double>::from({1, 1}, {2})),
                       doctest::Contains("position 0"), IndexError);
  CHECK_THROWS_AS(gather_rows(table, Tensor<double>::from({1, 1}, {0.5})),
                  IndexError);

  RngState rng(29, 0);
  auto big = oracle::random_tensor({7, 3}, rng);
  Tensor<double> ids = Tensor<double>::uninit({2, 4});
  for (int64_t i = 0; i < ids.size(); ++i) {
    ids.mutable_data()[i] = std::floor(rng_uniform(rng, 0, 7));
  }
  CHECK(oracle::allclose(gather_rows(big, ids), oracle::gather_rows(big, ids),
                         0, 0));
}

TEST_CASE("scatter_add") {
  // duplicate ids accumulate
  auto grads = Tensor<double>::from({1, 2, 1}, {1, 2});
  auto ids = Tensor<double>::from({1, 2}, {0, 0});
  auto out = scatter_add(grads, ids, 2);
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out.at(0) == 3);
  CHECK(out.at(1) == 0);

  auto single = scatter_add(Tensor<double>::from({1, 1, 2}, {5, 6}),
                            Tensor<double>::from({1, 1}, {1}), 3);
  CHECK(single.at(2) == 5);
  CHECK(single.at(3) == 6);

  RngState rng(31, 0);
  auto g = oracle::random_tensor({2, 5, 3}, rng);
  Tensor<double> rids = Tensor<double>::uninit({2, 5});
  for (int64_t i = 0; i < rids.size(); ++i) {
    rids.mutable_data()[i] = std::floor(rng_uniform(rng, 0, 4));
  }
  CHECK(oracle::allclose(scatter_add(g, rids, 4),
                         oracle::scatter_add(g, rids, 4), 1e-12, 1e-12));
}

TEST_CASE("gaussian determinism and moments") {
  RngState a(42, 1);
  RngState b(42, 1);
  auto t1 = gaussian<double>({64}, a);
  auto t2 = gaussian<double>({64}, b);
  CHECK(t1.same_bits(t2));

  RngState c(42, 2);
  auto t3 = gaussian<double>({64}, c);
  CHECK(t1.at(0) != t3.at(0));

  // float32 width is also reproducible bytewise
  RngState fa(7, 3), fb(7, 3);
  CHECK(gaussian<float>({33}, fa).same_bits(gaussian<float>({33}, fb)));

  RngState big(123, 0);
  auto sample = gaussian<double>({100000}, big);
  double mean = 0;
  for (int64_t i = 0; i < sample.size(); ++i) mean += sample.at(i);
  mean /= sample.size();
  double var = 0;
  for (int64_t i = 0; i < sample.size(); ++i) {
    var += (sample.at(i) - mean) * (sample.at(i) - mean);
  }
  var /= sample.size();
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng counter-based reproducibility") {
  RngState s(5, 9);
  (void)rng_next_u64(s);
  (void)rng_next_u64(s);
  RngState replay(5, 9);
  replay.counter = 2;
  CHECK(rng_next_u64(s) == rng_next_u64(replay));
}

TEST_CASE("bmm matches per-slice matmul") {
  RngState rng(37, 0);
  auto a = oracle::random_tensor({3, 2, 4}, rng);
  auto b = oracle::random_tensor({3, 4, 5}, rng);
  auto out = bmm(a, b);
  for (int64_t i = 0; i < 3; ++i) {
    auto ai = Tensor<double>::from(
        {2, 4}, std::vector<double>(a.data() + i * 8, a.data() + (i + 1) * 8));
    auto bi = Tensor<double>::from(
        {4, 5},
        std::vector<double>(b.data() + i * 20, b.data() + (i + 1) * 20));
    auto want = oracle::matmul(ai, bi);
    for (int64_t j = 0; j < 10; ++j) {
      CHECK(out.at(i * 10 + j) == doctest::Approx(want.at(j)).epsilon(1e-12));
    }
  }
  // broadcast on either side
  auto a1 = oracle::random_tensor({1, 2, 4}, rng);
  auto full = bmm(a1, b);
  CHECK(full.shape() == Shape{3, 2, 5});
  auto b1 = oracle::random_tensor({1, 4, 5}, rng);
  CHECK(bmm(a, b1).shape() == Shape{3, 2, 5});
}

TEST_CASE("transpose and slice") {
  auto m = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = transpose(m, {1, 0});
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.at(0) == 1);
  CHECK(t.at(1) == 4);
  CHECK(t.at(2) == 2);

  auto s = slice_axis(m, 1, 1, 2);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s.at(0) == 2);
  CHECK(s.at(3) == 6);
}

TEST_CASE("softmax_xent scalar reference") {
  // uniform logits: loss = ln K
  auto logits = Tensor<double>::zeros({2, 10});
  auto labels = Tensor<double>::from({2}, {3, 7});
  auto loss = softmax_xent(logits, labels);
  CHECK(loss.at(0) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(loss.at(1) == doctest::Approx(std::log(10.0)).epsilon(1e-14));

  // margin 20 drives the loss below 1e-8
  auto sharp = Tensor<double>::from({1, 3}, {20, 0, 0});
  auto y0 = Tensor<double>::from({1}, {0});
  CHECK(softmax_xent(sharp, y0).at(0) < 1e-8);

  RngState rng(41, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<long double> z = {rng_uniform(rng, -3, 3),
                                  rng_uniform(rng, -3, 3),
                                  rng_uniform(rng, -3, 3)};
    const int64_t label = static_cast<int64_t>(rng_uniform(rng, 0, 3));
    auto lt = Tensor<double>::from(
        {1, 3}, {static_cast<double>(z[0]), static_cast<double>(z[1]),
                 static_cast<double>(z[2])});
    auto yl = Tensor<double>::from({1}, {static_cast<double>(label)});
    CHECK(softmax_xent(lt, yl).at(0) ==
          doctest::Approx(static_cast<double>(oracle::xent_scalar(z, label)))
              .epsilon(1e-12));
  }

  // binary head: z=0 gives ln 2; extreme margins stay finite
  auto bl = Tensor<double>::from({3, 1}, {0, 30, -30});
  auto by = Tensor<double>::from({3}, {0, 1, 0});
  auto bloss = softmax_xent(bl, by);
  CHECK(bloss.at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(bloss.at(1) < 1e-12);
  CHECK(bloss.at(2) < 1e-12);
  CHECK(all_finite(bloss));

  CHECK_THROWS_AS(
      softmax_xent(logits, Tensor<double>::from({2}, {3, 11})), IndexError);
}
