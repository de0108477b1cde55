#include "doctest.h"
#include "seqdab/block.hpp"
#include "seqdab/finite_diff.hpp"

using namespace seqdab;

namespace {

Tensor<double> proj(const Shape& s, Rng& rng) {
  return Tensor<double>::randn(s, rng);
}

// Nudges values onto a lattice plus a strictly increasing offset, so no
// element (relu) and no pair difference (magnitude dab, pool ties) sits
// within the finite-difference window of a kink.
void separate(Tensor<double>& t, double margin = 1e-2) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = std::floor(t[i] * 7.0) / 7.0 +
           margin * 0.37 * static_cast<double>(i + 1);
}

}  // namespace

TEST_CASE("dab gradients match finite differences in every mode") {
  Rng rng(101);
  for (DabConfig cfg : {DabConfig{DabMode::Signed, 0},
                        DabConfig{DabMode::Magnitude, 0},
                        DabConfig{DabMode::Windowed, 0},
                        DabConfig{DabMode::Windowed, 2},
                        DabConfig{DabMode::Disabled, 0}}) {
    CAPTURE(to_string(cfg));
    auto x = Tensor<double>::randn({2, 4, 3, 3}, rng);
    if (cfg.mode == DabMode::Magnitude) separate(x);
    auto w = proj({2, 4, 3, 3}, rng);
    // Disabled mode cuts every path to the loss, so feed a side branch
    // that keeps the root parameter-dependent.
    auto rep = fd_check(
        {x},
        [&](Tape<double>& t, const std::vector<Var<double>>& in) {
          auto y = dab(in[0], cfg);
          auto side = weighted_sum(in[0], w * 0.25);
          return add(weighted_sum(y, w), side);
        });
    CHECK_MESSAGE(rep.passed, to_string(cfg), " ", rep.worst);
  }
}

TEST_CASE("dab gradient with a batched five-axis input") {
  Rng rng(102);
  auto x = Tensor<double>::randn({2, 2, 4, 2, 3}, rng);
  auto w = proj({2, 2, 4, 2, 3}, rng);
  auto rep = fd_check({x}, [&](Tape<double>& t, const std::vector<Var<double>>& in) {
    return weighted_sum(dab(in[0], DabConfig{DabMode::Signed, 0}), w);
  });
  CHECK_MESSAGE(rep.passed, rep.worst);
}

TEST_CASE("conv gradients for input, weights and bias") {
  Rng rng(103);
  auto x = Tensor<double>::randn({2, 3, 2, 5, 4}, rng);
  auto w = Tensor<double>::randn({2, 3, 1, 3, 3}, rng, 0.3);
  auto b = Tensor<double>::randn({2}, rng);
  auto pw = proj({2, 2, 2, 3, 2}, rng);
  auto rep = fd_check({x, w, b}, [&](Tape<double>& t, const std::vector<Var<double>>& in) {
    return weighted_sum(conv2d_per_frame(in[0], in[1], in[2], 2, 1), pw);
  });
  CHECK_MESSAGE(rep.passed, rep.worst);
}

TEST_CASE("strided and padded conv variants") {
  Rng rng(104);
  for (auto [k, s, p] : {std::tuple{1, 1, 0}, {3, 1, 1}, {3, 3, 0}, {5, 2, 2}}) {
    CAPTURE(k);
    auto x = Tensor<double>::randn({1, 2, 2, 7, 6}, rng);
    auto w = Tensor<double>::randn({3, 2, 1, k, k}, rng, 0.3);
    const int h2 = conv_out_extent(7, k, s, p), w2 = conv_out_extent(6, k, s, p);
    auto pw = proj({1, 3, 2, h2, w2}, rng);
    auto rep = fd_check({x, w}, [&, s = s, p = p](Tape<double>& t,
                                                  const std::vector<Var<double>>& in) {
      return weighted_sum(conv2d_per_frame(in[0], in[1], Var<double>{}, s, p), pw);
    });
    CHECK_MESSAGE(rep.passed, rep.worst);
  }
}

TEST_CASE("batch norm gradients for input and affine parameters") {
  Rng rng(105);
  auto x = Tensor<double>::randn({2, 3, 2, 3, 2}, rng);
  auto gamma = Tensor<double>::randn({3}, rng, 0.2);
  gamma.map() += 1.0;
  auto beta = Tensor<double>::randn({3}, rng, 0.2);
  auto pw = proj({2, 3, 2, 3, 2}, rng);
  auto rep = fd_check({x, gamma, beta},
                      [&](Tape<double>& t, const std::vector<Var<double>>& in) {
                        auto st = std::make_shared<BnState<double>>(BnState<double>::make(3));
                        auto y = batch_norm(in[0], in[1], in[2], st.get(), true);
                        return weighted_sum(y, pw);
                      });
  CHECK_MESSAGE(rep.passed, rep.worst);
}

TEST_CASE("relu, pool, linear and cross entropy chain") {
  Rng rng(106);
  auto x = Tensor<double>::randn({3, 2, 2, 3, 3}, rng);
  separate(x);  // keep relu inputs off the kink
  auto w = Tensor<double>::randn({4, 2}, rng, 0.5);
  auto b = Tensor<double>::randn({4}, rng, 0.5);
  auto rep = fd_check({x, w, b}, [&](Tape<double>& t, const std::vector<Var<double>>& in) {
    auto pooled = global_avg_pool(relu(in[0]));
    auto logits = linear(pooled, in[1], in[2]);
    return softmax_ce(logits, {1, 3, 0});
  });
  CHECK_MESSAGE(rep.passed, rep.worst);
}

TEST_CASE("max pool gradient") {
  Rng rng(107);
  auto x = Tensor<double>::randn({1, 2, 2, 6, 6}, rng);
  separate(x);  // distinct window maxima
  auto pw = proj({1, 2, 2, 3, 3}, rng);
  auto rep = fd_check({x}, [&](Tape<double>& t, const std::vector<Var<double>>& in) {
    return weighted_sum(max_pool_per_frame(in[0], 3, 2, 1), pw);
  });
  CHECK_MESSAGE(rep.passed, rep.worst);
}

TEST_CASE("full conv block gradient in signed and magnitude modes") {
  Rng rng(108);
  for (DabMode mode : {DabMode::Signed, DabMode::Magnitude}) {
    CAPTURE(to_string(mode));
    ConvBlockConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    cfg.kernel = 3;
    cfg.stride = 1;
    cfg.dab = DabConfig{mode, 0};
    auto params = make_conv_block<double>(cfg);
    init_conv_block(params, rng);
    auto x = Tensor<double>::randn({1, 2, 3, 4, 4}, rng);
    if (mode == DabMode::Magnitude) separate(x);
    auto pw = proj({1, 2, 3, 4, 4}, rng);
    auto rep = fd_check(
        {x, params.spatial.weights, params.fused.weights},
        [&](Tape<double>& t, const std::vector<Var<double>>& in) {
          return weighted_sum(conv_block(in[0], in[1], in[2], cfg), pw);
        });
    CHECK_MESSAGE(rep.passed, rep.worst);
  }
}

TEST_CASE("concat gradient splits cleanly") {
  Rng rng(109);
  auto a = Tensor<double>::randn({1, 2, 2, 2, 2}, rng);
  auto b = Tensor<double>::randn({1, 3, 2, 2, 2}, rng);
  auto pw = proj({1, 5, 2, 2, 2}, rng);
  auto rep = fd_check({a, b}, [&](Tape<double>& t, const std::vector<Var<double>>& in) {
    return weighted_sum(concat_channels(in[0], in[1]), pw);
  });
  CHECK_MESSAGE(rep.passed, rep.worst);
}
