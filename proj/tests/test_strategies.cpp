#include <memory>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "oracles.hpp"
#include "pegrad/autodiff.hpp"
#include "pegrad/strategies.hpp"
#include "pegrad/tensor_ops.hpp"

using namespace pegrad;
using namespace pegrad::models;

namespace {

Tensor<double> random_input(const ModelDesc& desc, int64_t B, RngState& rng) {
  Shape s = desc.input_shape;
  s.insert(s.begin(), B);
  if (!desc.token_input) return oracle::random_tensor(s, rng);
  const int64_t vocab = desc.layers[0].in;
  Tensor<double> t = Tensor<double>::uninit(s);
  for (int64_t i = 0; i < t.size(); ++i) {
    t.mutable_data()[i] = std::floor(rng_uniform(rng, 0, vocab));
  }
  return t;
}

Tensor<double> random_labels(const ModelDesc& desc, int64_t B, RngState& rng) {
  const int64_t k = desc.classes == 1 ? 2 : desc.classes;
  Tensor<double> t = Tensor<double>::uninit({B});
  for (int64_t i = 0; i < B; ++i) {
    t.mutable_data()[i] = std::floor(rng_uniform(rng, 0, k));
  }
  return t;
}

// Token models run at test scale; the benchmark-scale suite lives in the
// acceptance tests.
Model<double> test_model(ModelKind kind, uint64_t seed) {
  ModelOptions opts;
  if (kind == ModelKind::embed) {
    opts.seq_len = 12;
    opts.vocab = 40;
  }
  if (kind == ModelKind::lstm) {
    opts.seq_len = 8;
    opts.vocab = 30;
    opts.hidden = 6;
  }
  return build<double>(kind, seed, opts);
}

void check_stack_equality(const PerExampleGrads<double>& got,
                          const PerExampleGrads<double>& want, double rtol) {
  REQUIRE(got.stacks.size() == want.stacks.size());
  for (size_t p = 0; p < got.stacks.size(); ++p) {
    REQUIRE(got.stacks[p].shape() == want.stacks[p].shape());
    INFO("param ", p);
    CHECK(oracle::allclose(got.stacks[p], want.stacks[p], rtol, rtol));
  }
}

}  // namespace

TEST_CASE("naive_loop rows are the per-example gradients") {
  auto model = test_model(ModelKind::logreg, 1);
  RngState rng(10, 0);
  const int64_t B = 3;
  auto x = random_input(model.desc, B, rng);
  auto y = random_labels(model.desc, B, rng);
  auto stacks = naive_loop(model, x, y);
  CHECK(stacks.batch == B);
  CHECK(stacks.stacks[0].shape() == Shape{B, 104, 1});

  // row i equals grad on example i, via the finite-difference oracle
  Tape t = per_example_loss_tape(model.desc);
  for (int64_t i = 0; i < B; ++i) {
    Tensor<double> xi = Tensor<double>::from(
        {1, 104},
        std::vector<double>(x.data() + i * 104, x.data() + (i + 1) * 104));
    Tensor<double> yi = Tensor<double>::from({1}, {y.at(i)});
    RngState pick(i, 7);
    for (int rep = 0; rep < 5; ++rep) {
      const int64_t c = static_cast<int64_t>(rng_uniform(pick, 0, 104));
      const double fd = oracle::fd_coordinate(t, model.params, {xi, yi}, 0, c);
      CHECK(oracle::grad_matches(stacks.stacks[0].at(i * 104 + c), fd, 1e-5));
    }
  }
}

TEST_CASE("naive_loop rejects an empty batch") {
  auto model = test_model(ModelKind::logreg, 1);
  CHECK_THROWS_AS(
      naive_loop(model, Tensor<double>::zeros({0, 104}),
                 Tensor<double>::zeros({0})),
      ContractError);
}

TEST_CASE("B=1 equals grad with a leading axis added, all strategies") {
  auto model = test_model(ModelKind::fcnn, 2);
  RngState rng(11, 0);
  auto x = random_input(model.desc, 1, rng);
  auto y = random_labels(model.desc, 1, rng);
  auto ref = naive_loop(model, x, y);
  for (Strategy s : {Strategy::vmap, Strategy::outer, Strategy::jacmm,
                     Strategy::groupconv}) {
    GradEngine<double> engine(model, s, 1, ExecMode::graph);
    auto got = engine.compute(x, y, model.params);
    check_stack_equality(got, ref, 1e-9);
  }
}

TEST_CASE("outer product identity: a=(1,2), delta=(3,4)") {
  // single dense layer, contrived so the backward cotangent is exactly delta
  // W-grad must be [[3,6],[4,8]]
  RngState rng(12, 0);
  Tape t = record([](TapeBuilder& tb) {
    Var x = tb.input({1, 2}, "x");
    Var w = tb.param({2, 2}, "w");
    Var z = tb.matmul(x, tb.transpose(w, {1, 0}));
    Var weights = tb.constant({1, 2}, {3, 4});
    tb.mark_loss(tb.reduce_sum_all(tb.mul(z, weights)));
  });
  Tape g = grad(t);
  Executor<double> ex(std::make_shared<const Tape>(g));
  auto grads = ex.run({Tensor<double>::zeros({2, 2})},
                      {Tensor<double>::from({1, 2}, {1, 2})});
  CHECK(grads[0].at(0) == 3);
  CHECK(grads[0].at(1) == 6);
  CHECK(grads[0].at(2) == 4);
  CHECK(grads[0].at(3) == 8);
}

TEST_CASE("universal equivalence: every supported strategy equals naive_loop") {
  const std::vector<ModelKind> kinds = {
      ModelKind::logreg, ModelKind::fcnn,  ModelKind::mnist_cnn,
      ModelKind::cifar_cnn, ModelKind::embed, ModelKind::lstm};
  RngState rng(100, 0);
  for (ModelKind kind : kinds) {
    auto model = test_model(kind, 42 + static_cast<uint64_t>(kind));
    for (int64_t B : {1, 2, 4}) {
      auto x = random_input(model.desc, B, rng);
      auto y = random_labels(model.desc, B, rng);
      auto ref = naive_loop(model, x, y);
      for (Strategy s : all_strategies()) {
        if (s == Strategy::naive || s == Strategy::norms) continue;
        if (!strategy_supports(s, model.desc)) continue;
        CAPTURE(model_name(kind));
        CAPTURE(strategy_name(s));
        CAPTURE(B);
        GradEngine<double> engine(model, s, B, ExecMode::graph);
        auto got = engine.compute(x, y, model.params);
        check_stack_equality(got, ref, 1e-8);
      }
      // norms-only strategy against materialized norms
      if (strategy_supports(Strategy::norms, model.desc)) {
        auto norms = per_example_norms_dense(model, x, y);
        REQUIRE(norms.norms_only);
        auto want = per_example_global_norms(ref);
        CHECK(oracle::allclose(norms.norms, want, 1e-8, 1e-10));
      }
    }
  }
}

TEST_CASE("strategies agree between eager and graph execution bitwise") {
  auto model = test_model(ModelKind::fcnn, 5);
  RngState rng(13, 0);
  auto x = random_input(model.desc, 4, rng);
  auto y = random_labels(model.desc, 4, rng);
  for (Strategy s : {Strategy::naive, Strategy::vmap, Strategy::outer,
                     Strategy::jacmm}) {
    GradEngine<double> eager(model, s, 4, ExecMode::eager);
    GradEngine<double> graphm(model, s, 4, ExecMode::graph);
    auto a = eager.compute(x, y, model.params);
    auto b = graphm.compute(x, y, model.params);
    for (size_t p = 0; p < a.stacks.size(); ++p) {
      CHECK(a.stacks[p].same_bits(b.stacks[p]));
    }
  }
}

TEST_CASE("per-example norms: zero input zeroes the weight term") {
  auto model = test_model(ModelKind::logreg, 3);
  // with x = 0 the weight contribution vanishes; the norm is the bias part
  auto x = Tensor<double>::zeros({2, 104});
  auto y = Tensor<double>::from({2}, {1, 0});
  auto norms = per_example_norms_dense(model, x, y);
  auto ref = naive_loop(model, x, y);
  // weight rows of the stack must be zero
  CHECK(max_abs(ref.stacks[0]) == 0.0);
  auto want = per_example_global_norms(ref);
  CHECK(oracle::allclose(norms.norms, want, 1e-12, 1e-12));
}

TEST_CASE("norms identity on the single-layer example") {
  // a=(1,2), delta=(3,4) with no bias: norm^2 = 25 * 5 = 125... checked via
  // the strategies on a bias-full layer by comparing against materialized
  // gradients instead (the artifact's dense layers always carry biases).
  auto model = test_model(ModelKind::fcnn, 7);
  RngState rng(14, 0);
  auto x = random_input(model.desc, 8, rng);
  auto y = random_labels(model.desc, 8, rng);
  auto norms = per_example_norms_dense(model, x, y);
  auto want = per_example_global_norms(naive_loop(model, x, y));
  CHECK(oracle::allclose(norms.norms, want, 1e-8, 1e-10));
}

TEST_CASE("sum over axis 0 equals the batch gradient of the summed loss") {
  for (ModelKind kind : {ModelKind::fcnn, ModelKind::mnist_cnn,
                         ModelKind::embed}) {
    auto model = test_model(kind, 9);
    RngState rng(15, 0);
    const int64_t B = 4;
    auto x = random_input(model.desc, B, rng);
    auto y = random_labels(model.desc, B, rng);

    GradEngine<double> engine(model, Strategy::vmap, B, ExecMode::graph);
    auto stacks = engine.compute(x, y, model.params);
    auto summed = sum_over_examples(stacks);
    auto batch = engine.batch_grad_sum(x, y, model.params);
    REQUIRE(summed.size() == batch.size());
    for (size_t p = 0; p < summed.size(); ++p) {
      CAPTURE(model_name(kind));
      CHECK(oracle::allclose(summed[p], batch[p], 1e-9, 1e-9));
    }
  }
}

TEST_CASE("support matrix: typed rejections exactly where support is missing") {
  auto embed_model = test_model(ModelKind::embed, 1);
  auto lstm_model = test_model(ModelKind::lstm, 1);
  auto cnn_model = test_model(ModelKind::mnist_cnn, 1);

  // groupconv and the dense-only strategies reject embedding models
  CHECK_THROWS_WITH_AS(
      (GradEngine<double>(embed_model, Strategy::groupconv, 2,
                          ExecMode::graph)),
      doctest::Contains("unsupported layer"), UnsupportedError);
  CHECK_THROWS_AS((GradEngine<double>(embed_model, Strategy::outer, 2,
                                      ExecMode::graph)),
                  UnsupportedError);
  CHECK_THROWS_AS((GradEngine<double>(embed_model, Strategy::norms, 2,
                                      ExecMode::graph)),
                  UnsupportedError);
  // jacmm accepts embedding but rejects lstm
  CHECK(strategy_supports(Strategy::jacmm, embed_model.desc));
  CHECK_THROWS_WITH_AS(
      (GradEngine<double>(lstm_model, Strategy::jacmm, 2, ExecMode::graph)),
      doctest::Contains("unsupported layer"), UnsupportedError);
  CHECK_THROWS_AS(
      (GradEngine<double>(lstm_model, Strategy::groupconv, 2, ExecMode::graph)),
      UnsupportedError);
  // conv nets reject the dense-only strategies
  CHECK_THROWS_AS(
      (GradEngine<double>(cnn_model, Strategy::outer, 2, ExecMode::graph)),
      UnsupportedError);
  CHECK_THROWS_AS(
      (GradEngine<double>(cnn_model, Strategy::norms, 2, ExecMode::graph)),
      UnsupportedError);
  // naive and vmap support everything
  for (const auto& m : {&embed_model, &lstm_model, &cnn_model}) {
    CHECK(strategy_supports(Strategy::naive, m->desc));
    CHECK(strategy_supports(Strategy::vmap, m->desc));
  }
}

TEST_CASE("one-shot strategy functions agree with their engines") {
  auto fcnn = test_model(ModelKind::fcnn, 17);
  RngState rng(31, 0);
  auto x = random_input(fcnn.desc, 2, rng);
  auto y = random_labels(fcnn.desc, 2, rng);
  auto ref = naive_loop(fcnn, x, y);
  check_stack_equality(batched_per_example_grads(fcnn, x, y), ref, 1e-9);
  check_stack_equality(jacobian_mm_strategy(fcnn, x, y), ref, 1e-9);
  check_stack_equality(grouped_conv_strategy(fcnn, x, y), ref, 1e-9);
  check_stack_equality(outer_product_dense(fcnn, x, y), ref, 1e-9);

  auto cnn = test_model(ModelKind::mnist_cnn, 18);
  auto cx = random_input(cnn.desc, 2, rng);
  auto cy = random_labels(cnn.desc, 2, rng);
  auto cref = naive_loop(cnn, cx, cy);
  check_stack_equality(grouped_conv_strategy(cnn, cx, cy), cref, 1e-8);
  check_stack_equality(jacobian_mm_strategy(cnn, cx, cy), cref, 1e-8);
}

TEST_CASE("1x1 conv kernel: per-example grad is x_i * delta_i") {
  // one 1x1 conv with one channel on 1x1 images reduces to a scalar product
  ModelDesc desc;
  desc.kind = ModelKind::mnist_cnn;  // kind irrelevant for the check
  desc.layers = {{LayerKind::conv, 1, 1, 1, 1, 0},
                 {LayerKind::flatten},
                 {LayerKind::dense, 1, 1}};
  desc.input_shape = {1, 1, 1};
  desc.classes = 1;
  // rebuild parameter registry the way build_desc does
  {
    int ix = 0;
    auto add = [&](std::string name, Shape shape, int64_t fan_in) {
      desc.param_names.push_back(std::move(name));
      desc.param_shapes.push_back(std::move(shape));
      desc.param_fan_in.push_back(fan_in);
    };
    for (const auto& l : desc.layers) {
      const std::string prefix = "l" + std::to_string(ix++) + ".";
      if (l.kind == LayerKind::conv) {
        add(prefix + "W", {l.out, l.in, l.k, l.k}, l.in * l.k * l.k);
        add(prefix + "b", {l.out}, 0);
      } else if (l.kind == LayerKind::dense) {
        add(prefix + "W", {l.in, l.out}, l.in);
        add(prefix + "b", {l.out}, 0);
      }
    }
  }
  auto model = build_from_desc<double>(desc, 4);
  RngState rng(16, 0);
  auto x = oracle::random_tensor({3, 1, 1, 1}, rng);
  auto y = Tensor<double>::from({3}, {1, 0, 1});
  GradEngine<double> engine(model, Strategy::groupconv, 3, ExecMode::graph);
  auto got = engine.compute(x, y, model.params);
  auto ref = naive_loop(model, x, y);
  check_stack_equality(got, ref, 1e-10);
}
