#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "seqdab/block.hpp"
#include "seqdab/nn_ops.hpp"
#include "seqdab/perm.hpp"
#include "seqdab/tape.hpp"

namespace seqdab {

// Residual backbone description. Stage 1 keeps the stem stride; later
// stages open with stride 2. The head width is n!/2, so changing n only
// resizes the classifier.
struct NetworkConfig {
  enum class Block { Basic, Bottleneck };

  int seq_len = 3;
  int input_hw = 32;
  Block block = Block::Basic;
  std::vector<int> widths{16, 32, 64};
  std::vector<int> blocks{1, 1, 1};
  int stem_width = 16;
  int stem_kernel = 3;
  int stem_stride = 1;
  bool stem_pool = false;
  DabConfig dab;
  std::string preset = "desk-10";

  int classes() const { return num_classes(seq_len); }
  int feature_width() const {
    return block == Block::Bottleneck ? 4 * widths.back() : widths.back();
  }

  void validate() const {
    check_config(seq_len >= 2, "seq_len must be at least 2");
    check_config(input_hw >= 8, "input spatial size too small");
    check_config(!widths.empty() && widths.size() == blocks.size(),
                 "widths and blocks-per-stage must align");
    for (int w : widths) check_config(w >= 1, "stage width must be positive");
    for (int b : blocks) check_config(b >= 1, "blocks per stage must be positive");
    check_config(stem_width >= 1 && stem_kernel >= 1 && stem_stride >= 1,
                 "bad stem configuration");
  }

  static NetworkConfig preset_config(const std::string& name, int n,
                                     DabConfig dab_cfg) {
    NetworkConfig c;
    c.seq_len = n;
    c.dab = dab_cfg;
    c.preset = name;
    if (name == "desk-10") {
      // Defaults above: 3x3 stride-1 stem, no pool, 32x32 input.
    } else if (name == "paper-18") {
      c.input_hw = 112;
      c.widths = {64, 128, 256, 512};
      c.blocks = {2, 2, 2, 2};
      c.stem_width = 64;
      c.stem_kernel = 7;
      c.stem_stride = 2;
      c.stem_pool = true;
    } else if (name == "paper-50") {
      c.input_hw = 112;
      c.block = Block::Bottleneck;
      c.widths = {64, 128, 256, 512};
      c.blocks = {3, 4, 6, 3};
      c.stem_width = 64;
      c.stem_kernel = 7;
      c.stem_stride = 2;
      c.stem_pool = true;
    } else {
      throw ConfigError("unknown network preset '" + name + "'");
    }
    return c;
  }
};

inline std::string to_string(NetworkConfig::Block b) {
  return b == NetworkConfig::Block::Basic ? "basic" : "bottleneck";
}

inline NetworkConfig::Block parse_block_kind(const std::string& s) {
  if (s == "basic") return NetworkConfig::Block::Basic;
  if (s == "bottleneck") return NetworkConfig::Block::Bottleneck;
  throw ConfigError("unknown block kind '" + s + "'");
}

// DAB outputs captured during a forward pass, keyed by tap tag.
template <typename S>
using TapStore = std::map<std::string, Tensor<S>>;

template <typename S>
class Network {
 public:
  struct Param {
    std::string name;
    Tensor<S> value;
  };
  struct NamedBn {
    std::string name;
    BnState<S> state;
  };

  static Network build(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network net;
    net.cfg_ = cfg;
    Rng rng(derive_seed(seed, "network-init"));

    net.stem_.cfg = ConvBlockConfig{3, cfg.stem_width, cfg.stem_kernel,
                                    cfg.stem_stride, cfg.dab};
    net.init_cb(net.stem_, "stem", rng);
    net.stem_bn_ = net.make_bn("stem.bn", cfg.stem_width, rng);

    int in_ch = cfg.stem_width;
    net.stages_.resize(cfg.widths.size());
    for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
      const int width = cfg.widths[s];
      const int out_ch =
          cfg.block == NetworkConfig::Block::Bottleneck ? 4 * width : width;
      for (int b = 0; b < cfg.blocks[s]; ++b) {
        const int stride = (s > 0 && b == 0) ? 2 : 1;
        const std::string prefix =
            "layer" + std::to_string(s + 1) + "." + std::to_string(b);
        ResBlock rb;
        rb.kind = cfg.block;
        if (cfg.block == NetworkConfig::Block::Basic) {
          rb.cb1.cfg = ConvBlockConfig{in_ch, width, 3, stride, cfg.dab};
          net.init_cb(rb.cb1, prefix + ".block1", rng);
          rb.bn1 = net.make_bn(prefix + ".bn1", width, rng);
          rb.cb2.cfg = ConvBlockConfig{width, width, 3, 1, cfg.dab};
          net.init_cb(rb.cb2, prefix + ".block2", rng);
          rb.bn2 = net.make_bn(prefix + ".bn2", width, rng);
        } else {
          rb.reduce = net.make_plain(prefix + ".reduce", in_ch, width, 1, 1, 0, rng);
          rb.bn1 = net.make_bn(prefix + ".bn1", width, rng);
          rb.mid.cfg = ConvBlockConfig{width, width, 3, stride, cfg.dab};
          net.init_cb(rb.mid, prefix + ".mid", rng);
          rb.bn2 = net.make_bn(prefix + ".bn2", width, rng);
          rb.expand = net.make_plain(prefix + ".expand", width, out_ch, 1, 1, 0, rng);
          rb.bn3 = net.make_bn(prefix + ".bn3", out_ch, rng);
        }
        if (stride != 1 || in_ch != out_ch) {
          rb.has_proj = true;
          rb.proj = net.make_plain(prefix + ".proj", in_ch, out_ch, 1, stride, 0, rng);
          rb.proj_bn = net.make_bn(prefix + ".proj_bn", out_ch, rng);
        }
        net.stages_[s].push_back(std::move(rb));
        in_ch = out_ch;
      }
    }

    const int feat = cfg.feature_width();
    {
      Tensor<S> w({cfg.classes(), feat});
      std::normal_distribution<double> d(0.0, std::sqrt(2.0 / feat));
      for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(d(rng));
      net.head_w_ = net.add_param("head.w", std::move(w));
      net.head_b_ = net.add_param("head.b", Tensor<S>({cfg.classes()}));
    }
    return net;
  }

  // Forward over (b, 3, n, H, W); rank-4 input is treated as batch 1.
  // Parameter leaves are rebuilt on the tape each call and their ids kept
  // for gradient readout after backward.
  Var<S> forward(Tape<S>& t, const Tensor<S>& batch, bool training,
                 TapStore<S>* taps = nullptr) {
    Tensor<S> x = batch.rank() == 4
                      ? batch.reshaped({1, batch.dim(0), batch.dim(1),
                                        batch.dim(2), batch.dim(3)})
                      : batch;
    check_shape(x.rank() == 5, "network input must be rank 4 or 5");
    check_shape(x.dim(1) == 3, "network input must have 3 channels");
    check_shape(x.dim(2) == cfg_.seq_len, "input temporal extent != seq_len");
    check_shape(x.dim(3) == cfg_.input_hw && x.dim(4) == cfg_.input_hw,
                "input spatial size does not match the config");

    param_ids_.assign(params_.size(), -1);
    for (std::size_t i = 0; i < params_.size(); ++i)
      param_ids_[i] = t.push(params_[i].value, training && t.recording());

    Var<S> h = leaf(t, std::move(x), false);
    Var<S> fs{};
    h = apply_cb(t, h, stem_, training, taps ? &fs : nullptr);
    if (taps) (*taps)["conv1"] = fs.value();
    h = apply_bn(t, h, stem_bn_, training);
    h = relu(h);
    if (cfg_.stem_pool) h = max_pool_per_frame(h, 3, 2, 1);

    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        const bool tagged = taps && b + 1 == stages_[s].size();
        Var<S> fs_block{};
        h = apply_block(t, h, stages_[s][b], training, tagged ? &fs_block : nullptr);
        if (tagged)
          (*taps)["layer" + std::to_string(s + 1) + ".last"] = fs_block.value();
      }
    }

    Var<S> pooled = global_avg_pool(h);
    return linear(pooled, var(t, head_w_), var(t, head_b_));
  }

  // Eval-mode convenience: no recording, no gradients.
  Tensor<S> predict(const Tensor<S>& batch, TapStore<S>* taps = nullptr) {
    Tape<S> t;
    t.set_recording(false);
    return forward(t, batch, false, taps).value();
  }

  std::int64_t count_params() const {
    std::int64_t total = 0;
    for (const auto& p : params_) total += p.value.numel();
    return total;
  }

  const NetworkConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<NamedBn>& bn_states() { return bn_states_; }
  const std::vector<NamedBn>& bn_states() const { return bn_states_; }

  // Gradient of parameter i on the tape used by the last forward; empty
  // tensor when the parameter never received one.
  Tensor<S> param_grad(const Tape<S>& t, std::size_t i) const {
    const int id = param_ids_.at(i);
    return t.has_grad(id) ? t.grad(id) : Tensor<S>();
  }

 private:
  struct CbMod {
    int w1 = -1, w2 = -1;
    ConvBlockConfig cfg;
  };
  struct BnMod {
    int gamma = -1, beta = -1;
    int state = -1;
  };
  struct PlainMod {
    int w = -1;
    int stride = 1, padding = 0;
  };
  struct ResBlock {
    NetworkConfig::Block kind = NetworkConfig::Block::Basic;
    CbMod cb1, cb2, mid;
    PlainMod reduce, expand, proj;
    BnMod bn1, bn2, bn3, proj_bn;
    bool has_proj = false;
  };

  int add_param(std::string name, Tensor<S> value) {
    params_.push_back(Param{std::move(name), std::move(value)});
    return static_cast<int>(params_.size()) - 1;
  }

  void init_cb(CbMod& m, const std::string& prefix, Rng& rng) {
    auto p = make_conv_block<S>(m.cfg);
    init_conv_block(p, rng);
    m.w1 = add_param(prefix + ".spatial.w", std::move(p.spatial.weights));
    m.w2 = add_param(prefix + ".fused.w", std::move(p.fused.weights));
  }

  BnMod make_bn(const std::string& prefix, int channels, Rng&) {
    BnMod m;
    m.gamma = add_param(prefix + ".gamma", Tensor<S>::full({channels}, S(1)));
    m.beta = add_param(prefix + ".beta", Tensor<S>({channels}));
    bn_states_.push_back(NamedBn{prefix, BnState<S>::make(channels)});
    m.state = static_cast<int>(bn_states_.size()) - 1;
    return m;
  }

  PlainMod make_plain(const std::string& name, int c_in, int c_out, int k,
                      int stride, int padding, Rng& rng) {
    auto spec = make_conv<S>(c_in, c_out, k, stride, padding);
    init_conv_weights(spec, rng);
    PlainMod m;
    m.w = add_param(name + ".w", std::move(spec.weights));
    m.stride = stride;
    m.padding = padding;
    return m;
  }

  Var<S> var(Tape<S>& t, int param_idx) {
    return Var<S>{&t, param_ids_.at(static_cast<std::size_t>(param_idx))};
  }

  Var<S> apply_cb(Tape<S>& t, Var<S> x, const CbMod& m, bool, Var<S>* fs) {
    return conv_block(x, var(t, m.w1), var(t, m.w2), m.cfg, fs);
  }

  Var<S> apply_bn(Tape<S>& t, Var<S> x, const BnMod& m, bool training) {
    return batch_norm(x, var(t, m.gamma), var(t, m.beta),
                      &bn_states_[static_cast<std::size_t>(m.state)].state,
                      training);
  }

  Var<S> apply_plain(Tape<S>& t, Var<S> x, const PlainMod& m) {
    return conv2d_per_frame(x, var(t, m.w), Var<S>{}, m.stride, m.padding);
  }

  Var<S> apply_block(Tape<S>& t, Var<S> x, const ResBlock& rb, bool training,
                     Var<S>* fs_tag) {
    Var<S> skip = x;
    Var<S> h = x;
    if (rb.kind == NetworkConfig::Block::Basic) {
      h = apply_cb(t, h, rb.cb1, training, nullptr);
      h = apply_bn(t, h, rb.bn1, training);
      h = relu(h);
      h = apply_cb(t, h, rb.cb2, training, fs_tag);
      h = apply_bn(t, h, rb.bn2, training);
    } else {
      h = apply_plain(t, h, rb.reduce);
      h = apply_bn(t, h, rb.bn1, training);
      h = relu(h);
      h = apply_cb(t, h, rb.mid, training, fs_tag);
      h = apply_bn(t, h, rb.bn2, training);
      h = relu(h);
      h = apply_plain(t, h, rb.expand);
      h = apply_bn(t, h, rb.bn3, training);
    }
    if (rb.has_proj) {
      skip = apply_plain(t, skip, rb.proj);
      skip = apply_bn(t, skip, rb.proj_bn, training);
    }
    return relu(add(h, skip));
  }

  NetworkConfig cfg_;
  std::vector<Param> params_;
  std::vector<NamedBn> bn_states_;
  std::vector<int> param_ids_;
  CbMod stem_;
  BnMod stem_bn_;
  std::vector<std::vector<ResBlock>> stages_;
  int head_w_ = -1, head_b_ = -1;
};

}  // namespace seqdab
