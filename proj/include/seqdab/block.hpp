#pragma once

#include "seqdab/conv.hpp"
#include "seqdab/dab.hpp"
#include "seqdab/nn_ops.hpp"
#include "seqdab/tape.hpp"

namespace seqdab {

// Drop-in replacement for a spatial convolution: a per-frame conv, the
// difference accumulator over its output, channel concat of both, and a
// fusing conv that also carries the stride.
struct ConvBlockConfig {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  DabConfig dab;
};

template <typename S>
struct ConvBlockParams {
  ConvSpec<S> spatial;  // c_in -> c_out, stride 1
  ConvSpec<S> fused;    // 2*c_out -> c_out, carries the stride
};

template <typename S>
ConvBlockParams<S> make_conv_block(const ConvBlockConfig& cfg) {
  check_config(cfg.kernel >= 1 && cfg.stride >= 1 && cfg.in_channels >= 1 &&
                   cfg.out_channels >= 1,
               "bad conv block config");
  ConvBlockParams<S> p;
  const int pad = cfg.kernel / 2;
  p.spatial = make_conv<S>(cfg.in_channels, cfg.out_channels, cfg.kernel, 1, pad);
  p.fused = make_conv<S>(2 * cfg.out_channels, cfg.out_channels, cfg.kernel,
                         cfg.stride, pad);
  return p;
}

template <typename S>
void init_conv_block(ConvBlockParams<S>& p, Rng& rng) {
  init_conv_weights(p.spatial, rng);
  init_conv_weights(p.fused, rng);
}

// Kernel-level forward; optionally exposes the accumulated slices.
template <typename S>
Tensor<S> conv_block_forward(const Tensor<S>& x, const ConvBlockParams<S>& p,
                             const DabConfig& dab_cfg,
                             Tensor<S>* fs_tap = nullptr) {
  Tensor<S> fc = conv2d_per_frame(x, p.spatial);
  Tensor<S> fs = dab_forward(fc, dab_cfg);
  if (fs_tap) *fs_tap = fs;
  Tensor<S> cat = concat_channels(fc, fs);
  return conv2d_per_frame(cat, p.fused);
}

// Tape-level forward built from the primitive ops; fs_out exposes the
// accumulator node for heat-map taps.
template <typename S>
Var<S> conv_block(Var<S> x, Var<S> w_spatial, Var<S> w_fused,
                  const ConvBlockConfig& cfg, Var<S>* fs_out = nullptr) {
  const int pad = cfg.kernel / 2;
  Var<S> fc = conv2d_per_frame(x, w_spatial, Var<S>{}, 1, pad);
  Var<S> fs = dab(fc, cfg.dab);
  if (fs_out) *fs_out = fs;
  Var<S> cat = concat_channels(fc, fs);
  return conv2d_per_frame(cat, w_fused, Var<S>{}, cfg.stride, pad);
}

}  // namespace seqdab
