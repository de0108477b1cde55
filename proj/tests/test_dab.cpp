#include "doctest.h"
#include "seqdab/dab.hpp"

using namespace seqdab;

namespace {

// One-pixel slices make the accumulation arithmetic easy to read.
Tensor<float> slices(std::initializer_list<float> v) {
  std::vector<float> data(v);
  return Tensor<float>({1, static_cast<int>(data.size()), 1, 1}, data);
}

std::vector<float> flat(const Tensor<float>& t) {
  return std::vector<float>(t.data(), t.data() + t.numel());
}

}  // namespace

TEST_CASE("signed accumulation on three scalar slices") {
  auto fc = slices({1.0f, 2.0f, 4.0f});
  DabConfig cfg{DabMode::Signed, 0};
  for (bool naive : {false, true}) {
    auto v = flat(naive ? dab_forward_naive(fc, cfg) : dab_forward(fc, cfg));
    CHECK(v[0] == doctest::Approx(-4.0f));  // (1-2)+(1-4)
    CHECK(v[1] == doctest::Approx(-2.0f));  // (2-4)
    CHECK(v[2] == doctest::Approx(4.0f));   // copied last slice
  }
}

TEST_CASE("magnitude accumulation on three scalar slices") {
  auto fc = slices({1.0f, 2.0f, 4.0f});
  DabConfig cfg{DabMode::Magnitude, 0};
  auto v = flat(dab_forward(fc, cfg));
  CHECK(v[0] == doctest::Approx(4.0f));  // |1-2|+|1-4|
  CHECK(v[1] == doctest::Approx(2.0f));
  CHECK(v[2] == doctest::Approx(4.0f));
  CHECK(max_abs_diff(dab_forward(fc, cfg), dab_forward_naive(fc, cfg)) == 0.0f);
}

TEST_CASE("windowed accumulation on three scalar slices") {
  auto fc = slices({1.0f, 2.0f, 4.0f});
  DabConfig cfg{DabMode::Windowed, 1};
  auto v = flat(dab_forward(fc, cfg));
  CHECK(v[0] == doctest::Approx(-1.0f));  // (1-1)+(1-2)
  CHECK(v[1] == doctest::Approx(-2.0f));  // (2-2)+(2-4)
  CHECK(v[2] == doctest::Approx(4.0f));
}

TEST_CASE("disabled mode zeroes every slice including the last") {
  auto fc = slices({1.0f, 2.0f, 4.0f});
  DabConfig cfg{DabMode::Disabled, 0};
  auto out = dab_forward(fc, cfg);
  CHECK(out.map().abs().maxCoeff() == 0.0f);
  CHECK(dab_forward_naive(fc, cfg).map().abs().maxCoeff() == 0.0f);
}

TEST_CASE("two slices reduce to a single difference plus the copy") {
  auto fc = slices({3.0f, 5.0f});
  DabConfig cfg{DabMode::Signed, 0};
  auto v = flat(dab_forward(fc, cfg));
  CHECK(v[0] == doctest::Approx(-2.0f));
  CHECK(v[1] == doctest::Approx(5.0f));
}

TEST_CASE("windowed covering the whole suffix equals signed") {
  Rng rng(11);
  for (int n : {2, 3, 5}) {
    auto fc = Tensor<double>::randn({2, 3, n, 4, 5}, rng);
    DabConfig sgn{DabMode::Signed, 0};
    for (int m : {n - 1, n, n + 3}) {
      DabConfig win{DabMode::Windowed, m};
      CHECK(max_rel_diff(dab_forward(fc, win), dab_forward(fc, sgn)) < 1e-12);
      CHECK(max_abs_diff(dab_forward_naive(fc, win), dab_forward_naive(fc, sgn)) == 0.0);
    }
  }
}

TEST_CASE("window zero keeps only the copied last slice") {
  Rng rng(12);
  auto fc = Tensor<float>::randn({2, 4, 3, 3}, rng);
  DabConfig cfg{DabMode::Windowed, 0};
  auto out = dab_forward(fc, cfg);
  const std::int64_t hw = 9;
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 4; ++i) {
      for (std::int64_t j = 0; j < hw; ++j) {
        const std::int64_t at = (c * 4 + i) * hw + j;
        if (i == 3)
          CHECK(out[at] == fc[at]);
        else
          CHECK(out[at] == 0.0f);
      }
    }
  }
}

TEST_CASE("fast path matches the naive path across shapes and modes") {
  Rng rng(99);
  std::uniform_int_distribution<int> cd(1, 6), nd(2, 6), hd(1, 9);
  for (int trial = 0; trial < 60; ++trial) {
    Shape s{cd(rng), nd(rng), hd(rng), hd(rng)};
    if (trial % 3 == 0) s.insert(s.begin(), cd(rng));  // batched variant
    auto fc = Tensor<float>::randn(s, rng);
    const int n = s[s.size() - 3];
    for (DabConfig cfg : {DabConfig{DabMode::Signed, 0},
                          DabConfig{DabMode::Magnitude, 0},
                          DabConfig{DabMode::Windowed, trial % (n + 1)},
                          DabConfig{DabMode::Disabled, 0}}) {
      auto fast = dab_forward(fc, cfg);
      auto naive = dab_forward_naive(fc, cfg);
      CHECK(max_scaled_diff(fast, naive) < 1e-5);
    }
  }
}

TEST_CASE("batched forward equals per-sample forward") {
  Rng rng(5);
  auto fc = Tensor<float>::randn({3, 2, 4, 5, 6}, rng);
  DabConfig cfg{DabMode::Signed, 0};
  auto full = dab_forward(fc, cfg);
  const std::int64_t per = fc.numel() / 3;
  for (int b = 0; b < 3; ++b) {
    Tensor<float> one({2, 4, 5, 6});
    std::copy(fc.data() + b * per, fc.data() + (b + 1) * per, one.data());
    auto out = dab_forward(one, cfg);
    for (std::int64_t i = 0; i < per; ++i) CHECK(out[i] == full[b * per + i]);
  }
}

TEST_CASE("hand-computed signed backward on two slices") {
  // out0 = f0 - f1, out1 = f1; with upstream (g0, g1):
  // df0 = g0, df1 = g1 - g0.
  Tensor<float> gs({1, 2, 1, 1}, {0.5f, 2.0f});
  DabConfig cfg{DabMode::Signed, 0};
  auto gc = dab_backward(gs, cfg);
  CHECK(gc[0] == doctest::Approx(0.5f));
  CHECK(gc[1] == doctest::Approx(1.5f));
}

TEST_CASE("disabled backward passes no gradient") {
  Tensor<float> gs({1, 3, 2, 2});
  gs.map().setConstant(1.0f);
  auto gc = dab_backward(gs, DabConfig{DabMode::Disabled, 0});
  CHECK(gc.map().abs().maxCoeff() == 0.0f);
}

TEST_CASE("magnitude backward requires the saved signs") {
  Tensor<float> gs({1, 3, 1, 1}, {1.0f, 1.0f, 1.0f});
  CHECK_THROWS_AS(dab_backward(gs, DabConfig{DabMode::Magnitude, 0}), Error);
}

TEST_CASE("temporal extent below two is rejected") {
  Tensor<float> one({2, 1, 3, 3});
  CHECK_THROWS_AS(dab_forward(one, DabConfig{}), ShapeError);
  Tensor<float> bad_rank({2, 3, 3});
  CHECK_THROWS_AS(dab_forward(bad_rank, DabConfig{}), ShapeError);
}

TEST_CASE("mode strings round trip") {
  CHECK(parse_dab_config("signed").mode == DabMode::Signed);
  CHECK(parse_dab_config("magnitude").mode == DabMode::Magnitude);
  CHECK(parse_dab_config("disabled").mode == DabMode::Disabled);
  auto w = parse_dab_config("windowed:3");
  CHECK(w.mode == DabMode::Windowed);
  CHECK(w.window == 3);
  CHECK(to_string(w) == "windowed:3");
  CHECK_THROWS_AS(parse_dab_config("windowed:x"), ConfigError);
  CHECK_THROWS_AS(parse_dab_config("windowed:-1"), ConfigError);
  CHECK_THROWS_AS(parse_dab_config("bogus"), ConfigError);
}
