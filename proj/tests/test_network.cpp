#include "doctest.h"
#include "seqdab/network.hpp"
#include "seqdab/sgd.hpp"

using namespace seqdab;

TEST_CASE("desk preset emits n!/2 logits") {
  auto cfg = NetworkConfig::preset_config("desk-10", 3, DabConfig{});
  auto net = Network<float>::build(cfg, 1);
  Rng rng(2);
  auto x = Tensor<float>::randn({2, 3, 3, 32, 32}, rng, 0.5f);
  auto logits = net.predict(x);
  CHECK(logits.shape() == Shape{2, 3});
  CHECK(logits.all_finite());
}

TEST_CASE("batch of two at n=4 gives a (2, 12) logit block") {
  auto cfg = NetworkConfig::preset_config("desk-10", 4, DabConfig{});
  auto net = Network<float>::build(cfg, 3);
  Rng rng(4);
  auto x = Tensor<float>::randn({2, 3, 4, 32, 32}, rng, 0.5f);
  CHECK(net.predict(x).shape() == Shape{2, 12});
}

TEST_CASE("rank-4 input is accepted as a singleton batch") {
  auto cfg = NetworkConfig::preset_config("desk-10", 3, DabConfig{});
  auto net = Network<float>::build(cfg, 5);
  Rng rng(6);
  auto x = Tensor<float>::randn({3, 3, 32, 32}, rng, 0.5f);
  CHECK(net.predict(x).shape() == Shape{1, 3});
}

TEST_CASE("same seed builds bit-identical parameters") {
  auto cfg = NetworkConfig::preset_config("desk-10", 4, DabConfig{});
  auto a = Network<float>::build(cfg, 42);
  auto b = Network<float>::build(cfg, 42);
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    CHECK(max_abs_diff(a.params()[i].value, b.params()[i].value) == 0.0f);
  }
  auto c = Network<float>::build(cfg, 43);
  CHECK(max_abs_diff(a.params()[0].value, c.params()[0].value) > 0.0f);
}

TEST_CASE("parameter counts: head arithmetic and the desk budget") {
  auto cfg = NetworkConfig::preset_config("desk-10", 3, DabConfig{});
  auto net = Network<float>::build(cfg, 1);
  std::int64_t head = 0;
  for (const auto& p : net.params())
    if (p.name.rfind("head.", 0) == 0) head += p.value.numel();
  CHECK(head == 64 * 3 + 3);
  CHECK(net.count_params() < 500000);
  CHECK(net.count_params() == Network<float>::build(cfg, 9).count_params());
}

TEST_CASE("paper presets build with the documented head widths") {
  auto c18 = NetworkConfig::preset_config("paper-18", 3, DabConfig{});
  auto n18 = Network<float>::build(c18, 1);
  std::int64_t head_w = 0;
  for (const auto& p : n18.params())
    if (p.name == "head.w") head_w = p.value.numel();
  CHECK(head_w == 512 * 3);

  auto c50 = NetworkConfig::preset_config("paper-50", 5, DabConfig{});
  auto n50 = Network<float>::build(c50, 1);
  for (const auto& p : n50.params())
    if (p.name == "head.w") CHECK(p.value.shape() == Shape{60, 2048});
  CHECK_THROWS_AS(NetworkConfig::preset_config("paper-34", 3, DabConfig{}),
                  ConfigError);
}

TEST_CASE("paper-50 forward emits 60 logits for five frames") {
  auto cfg = NetworkConfig::preset_config("paper-50", 5, DabConfig{});
  auto net = Network<float>::build(cfg, 7);
  Rng rng(8);
  auto x = Tensor<float>::randn({3, 5, 112, 112}, rng, 0.5f);
  auto logits = net.predict(x);
  CHECK(logits.shape() == Shape{1, 60});
  CHECK(logits.all_finite());
}

TEST_CASE("duplicated samples give identical logit rows in eval mode") {
  auto cfg = NetworkConfig::preset_config("desk-10", 3, DabConfig{});
  auto net = Network<float>::build(cfg, 11);
  Rng rng(12);
  auto one = Tensor<float>::randn({3, 3, 32, 32}, rng, 0.5f);
  Tensor<float> two({2, 3, 3, 32, 32});
  std::copy(one.data(), one.data() + one.numel(), two.data());
  std::copy(one.data(), one.data() + one.numel(), two.data() + one.numel());
  auto logits = net.predict(two);
  for (int j = 0; j < 3; ++j) CHECK(logits(0, j) == logits(1, j));
}

TEST_CASE("input validation rejects mismatched shapes") {
  auto cfg = NetworkConfig::preset_config("desk-10", 3, DabConfig{});
  auto net = Network<float>::build(cfg, 13);
  CHECK_THROWS_AS(net.predict(Tensor<float>({1, 3, 3, 16, 16})), ShapeError);
  CHECK_THROWS_AS(net.predict(Tensor<float>({1, 3, 4, 32, 32})), ShapeError);
  CHECK_THROWS_AS(net.predict(Tensor<float>({1, 1, 3, 32, 32})), ShapeError);
  CHECK_THROWS_AS(net.predict(Tensor<float>({3, 32, 32})), ShapeError);
}

TEST_CASE("config validation") {
  NetworkConfig bad;
  bad.blocks = {1, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  NetworkConfig n1;
  n1.seq_len = 1;
  CHECK_THROWS_AS(n1.validate(), ConfigError);
}

TEST_CASE("taps cover the stem and each stage with stagewise spatial sizes") {
  auto cfg = NetworkConfig::preset_config("desk-10", 4, DabConfig{});
  auto net = Network<float>::build(cfg, 15);
  Rng rng(16);
  auto x = Tensor<float>::randn({1, 3, 4, 32, 32}, rng, 0.5f);
  TapStore<float> taps;
  net.predict(x, &taps);
  REQUIRE(taps.size() == 4);
  CHECK(taps.at("conv1").shape() == Shape{1, 16, 4, 32, 32});
  CHECK(taps.at("layer1.last").shape() == Shape{1, 16, 4, 32, 32});
  CHECK(taps.at("layer2.last").shape() == Shape{1, 32, 4, 16, 16});
  CHECK(taps.at("layer3.last").shape() == Shape{1, 64, 4, 8, 8});
}

TEST_CASE("disabled dab makes eval logits frame-order invariant") {
  DabConfig off{DabMode::Disabled, 0};
  auto cfg = NetworkConfig::preset_config("desk-10", 4, off);
  auto net = Network<float>::build(cfg, 17);
  Rng rng(18);
  auto x = Tensor<float>::randn({1, 3, 4, 32, 32}, rng, 0.5f);
  Tensor<float> shuffled(x.shape());
  const int order[4] = {2, 0, 3, 1};
  const std::int64_t hw = 32 * 32;
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < 4; ++t)
      std::copy(x.data() + (c * 4 + order[t]) * hw,
                x.data() + (c * 4 + order[t] + 1) * hw,
                shuffled.data() + (c * 4 + t) * hw);
  auto a = net.predict(x);
  auto b = net.predict(shuffled);
  CHECK(max_scaled_diff(a, b) < 1e-5);

  // Signed mode must not be order-invariant, otherwise the task is moot.
  auto cfg_on = NetworkConfig::preset_config("desk-10", 4, DabConfig{});
  auto net_on = Network<float>::build(cfg_on, 17);
  CHECK(max_scaled_diff(net_on.predict(x), net_on.predict(shuffled)) > 1e-3);
}

TEST_CASE("stem and head gradients match finite differences on a tiny config") {
  NetworkConfig cfg;
  cfg.seq_len = 3;
  cfg.input_hw = 8;
  cfg.widths = {4};
  cfg.blocks = {1};
  cfg.stem_width = 4;
  auto net = Network<double>::build(cfg, 19);
  Rng rng(20);
  auto x = Tensor<double>::randn({2, 3, 3, 8, 8}, rng, 0.5);
  const std::vector<int> labels{1, 2};

  auto loss_value = [&]() {
    Tape<double> t;
    t.set_recording(false);
    auto logits = net.forward(t, x, true);
    return softmax_cross_entropy(logits.value(), labels);
  };

  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& name = net.params()[i].name;
    if (name == "stem.spatial.w" || name == "head.w" || name == "stem.bn.gamma")
      targets.push_back(i);
  }
  REQUIRE(targets.size() == 3);

  Tape<double> t;
  auto logits = net.forward(t, x, true);
  auto loss = softmax_ce(logits, labels);
  t.backward(loss.id);

  const double h = 1e-5;
  for (std::size_t i : targets) {
    Tensor<double> ana = net.param_grad(t, i);
    REQUIRE_FALSE(ana.empty());
    Tensor<double>& p = net.params()[i].value;
    double worst = 0.0;
    for (std::int64_t e = 0; e < p.numel(); ++e) {
      const double keep = p[e];
      p[e] = keep + h;
      const double up = loss_value();
      p[e] = keep - h;
      const double dn = loss_value();
      p[e] = keep;
      const double num = (up - dn) / (2 * h);
      const double diff = std::abs(ana[e] - num);
      if (diff < 1e-8) continue;
      worst = std::max(worst, diff / std::max(1e-6, std::abs(ana[e]) + std::abs(num)));
    }
    CHECK_MESSAGE(worst < 1e-3, net.params()[i].name, " worst rel ", worst);
  }
}

TEST_CASE("a single batch can be memorized quickly") {
  auto cfg = NetworkConfig::preset_config("desk-10", 3, DabConfig{});
  auto net = Network<float>::build(cfg, 21);
  Rng rng(22);
  auto x = Tensor<float>::randn({4, 3, 3, 32, 32}, rng, 0.5f);
  const std::vector<int> labels{0, 2, 1, 0};
  SgdOptimizer<float> opt(0.05, 0.9, 0.0);
  double loss = 1e9;
  for (int step = 0; step < 200 && loss >= 0.01; ++step) {
    Tape<float> t;
    auto logits = net.forward(t, x, true);
    auto l = softmax_ce(logits, labels);
    loss = l.value()[0];
    t.backward(l.id);
    for (std::size_t i = 0; i < net.params().size(); ++i)
      opt.step(i, net.params()[i].value, net.param_grad(t, i));
  }
  CHECK(loss < 0.01);
}
