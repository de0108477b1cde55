#include "doctest.h"
#include "seqdab/block.hpp"
#include "seqdab/tape.hpp"

using namespace seqdab;

TEST_CASE("gradients flow through add, sub and relu") {
  Tape<float> t;
  auto x = leaf(t, Tensor<float>({3}, {1.0f, -2.0f, 3.0f}), true);
  auto y = leaf(t, Tensor<float>({3}, {0.5f, 0.5f, 0.5f}), true);
  auto z = relu(sub(add(x, y), leaf(t, Tensor<float>({3}, {0.0f, 0.0f, 5.0f}))));
  // z = relu(x + y - c) = [1.5, 0, 0]
  Tensor<float> w = Tensor<float>::full({3}, 1.0f);
  auto loss = weighted_sum(z, w);
  CHECK(loss.value()[0] == doctest::Approx(1.5f));
  t.backward(loss.id);
  CHECK(x.grad()[0] == doctest::Approx(1.0f));
  CHECK(x.grad()[1] == doctest::Approx(0.0f));
  CHECK(y.grad()[2] == doctest::Approx(0.0f));
}

TEST_CASE("a variable used twice accumulates both contributions") {
  Tape<float> t;
  auto x = leaf(t, Tensor<float>({2}, {1.0f, 2.0f}), true);
  auto s = add(x, x);
  auto loss = weighted_sum(s, Tensor<float>::full({2}, 1.0f));
  t.backward(loss.id);
  CHECK(x.grad()[0] == doctest::Approx(2.0f));
  CHECK(x.grad()[1] == doctest::Approx(2.0f));
}

TEST_CASE("backward demands a scalar root and refuses to run twice") {
  Tape<float> t;
  auto x = leaf(t, Tensor<float>({2}, {1.0f, 2.0f}), true);
  auto y = relu(x);
  CHECK_THROWS_AS(t.backward(y.id), ShapeError);
  Tape<float> t2;
  auto a = leaf(t2, Tensor<float>({2}, {1.0f, 2.0f}), true);
  auto l = weighted_sum(a, Tensor<float>::full({2}, 1.0f));
  t2.backward(l.id);
  CHECK_THROWS_AS(t2.backward(l.id), Error);
  Tape<float> t3;
  CHECK_THROWS_AS(t3.backward(0), Error);
}

TEST_CASE("a root with no parameter dependence is rejected") {
  Tape<float> t;
  auto x = leaf(t, Tensor<float>({2}, {1.0f, 2.0f}), false);
  auto l = weighted_sum(x, Tensor<float>::full({2}, 1.0f));
  CHECK_THROWS_AS(t.backward(l.id), Error);
}

TEST_CASE("recording off skips closures but keeps values") {
  Tape<float> t;
  t.set_recording(false);
  auto x = leaf(t, Tensor<float>({2}, {-1.0f, 2.0f}), true);
  auto y = relu(x);
  CHECK(y.value()[0] == 0.0f);
  CHECK(y.value()[1] == 2.0f);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("tape conv block matches the kernel-level composition") {
  Rng rng(77);
  ConvBlockConfig cfg;
  cfg.in_channels = 3;
  cfg.out_channels = 4;
  cfg.kernel = 3;
  cfg.stride = 2;
  cfg.dab = DabConfig{DabMode::Signed, 0};
  auto params = make_conv_block<float>(cfg);
  init_conv_block(params, rng);
  auto x = Tensor<float>::randn({2, 3, 3, 8, 8}, rng);

  Tensor<float> fs_kernel;
  auto want = conv_block_forward(x, params, cfg.dab, &fs_kernel);

  Tape<float> t;
  auto xv = leaf(t, x, true);
  auto w1 = leaf(t, params.spatial.weights, true);
  auto w2 = leaf(t, params.fused.weights, true);
  Var<float> fs;
  auto got = conv_block(xv, w1, w2, cfg, &fs);
  CHECK(max_rel_diff(got.value(), want, 1e-6) < 1e-6);
  CHECK(max_abs_diff(fs.value(), fs_kernel) == 0.0f);
  CHECK(got.value().shape() == Shape{2, 4, 3, 4, 4});

  auto loss = weighted_sum(got, Tensor<float>::full(got.value().shape(), 1.0f));
  t.backward(loss.id);
  CHECK(xv.grad().all_finite());
  CHECK(w1.grad().all_finite());
  CHECK(w2.grad().all_finite());
  CHECK(w1.grad().map().abs().maxCoeff() > 0.0f);
}

TEST_CASE("magnitude dab keeps signs for its backward pass") {
  Rng rng(78);
  Tape<float> t;
  auto x = leaf(t, Tensor<float>::randn({2, 3, 4, 4}, rng), true);
  auto y = dab(x, DabConfig{DabMode::Magnitude, 0});
  auto loss = weighted_sum(y, Tensor<float>::full(y.value().shape(), 1.0f));
  t.backward(loss.id);
  CHECK(x.grad().all_finite());
}

TEST_CASE("eval-mode batch norm forward works but refuses backward") {
  Rng rng(79);
  Tape<float> t;
  auto x = leaf(t, Tensor<float>::randn({1, 2, 2, 3, 3}, rng), true);
  auto gamma = leaf(t, Tensor<float>::full({2}, 1.0f), true);
  auto beta = leaf(t, Tensor<float>({2}), true);
  auto state = BnState<float>::make(2);
  auto y = batch_norm(x, gamma, beta, &state, false);
  CHECK(y.value().all_finite());
  auto loss = weighted_sum(y, Tensor<float>::full(y.value().shape(), 1.0f));
  CHECK_THROWS_AS(t.backward(loss.id), Error);
}

TEST_CASE("cross entropy node scales its stored gradient by the seed") {
  Tape<float> t;
  auto logits = leaf(t, Tensor<float>({2, 3}, {1.0f, 2.0f, 0.5f, 0.0f, 0.0f, 1.0f}), true);
  auto loss = softmax_ce(logits, {1, 2});
  t.backward(loss.id);
  float s = 0.0f;
  for (int j = 0; j < 3; ++j) s += logits.grad()(0, j);
  CHECK(s == doctest::Approx(0.0f).epsilon(1e-5));
  CHECK(logits.grad()(0, 1) < 0.0f);
}
