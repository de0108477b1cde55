#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/gemm.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

// Per-frame 2D convolution parameters. Weights are (c_out, c_in, 1, k, k):
// the temporal extent is 1, every frame is convolved with the same kernel.
// An empty bias tensor means no bias.
template <typename S>
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  Tensor<S> weights;
  Tensor<S> bias;
};

template <typename S>
ConvSpec<S> make_conv(int c_in, int c_out, int k, int stride, int padding,
                      bool with_bias = false) {
  ConvSpec<S> c;
  c.in_channels = c_in;
  c.out_channels = c_out;
  c.kernel = k;
  c.stride = stride;
  c.padding = padding;
  c.weights = Tensor<S>({c_out, c_in, 1, k, k});
  if (with_bias) c.bias = Tensor<S>({c_out});
  return c;
}

template <typename S>
void init_conv_weights(ConvSpec<S>& c, Rng& rng) {
  const double fan_in = static_cast<double>(c.in_channels) * c.kernel * c.kernel;
  const S std = static_cast<S>(std::sqrt(2.0 / fan_in));
  std::normal_distribution<double> d(0.0, static_cast<double>(std));
  for (std::int64_t i = 0; i < c.weights.numel(); ++i)
    c.weights[i] = static_cast<S>(d(rng));
  if (!c.bias.empty()) c.bias.map().setZero();
}

inline int conv_out_extent(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  check_shape(span >= 0, "kernel larger than padded input");
  return span / stride + 1;
}

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <typename S>
std::vector<S>& conv_scratch(std::size_t need) {
  thread_local std::vector<S> buf;
  if (buf.size() < need) buf.resize(need);
  return buf;
}

// The 3x3/stride-1/pad-1 case keeps the frame extent, so each (ci, ky, kx)
// row of the column matrix is a shifted copy of a frame plane. One copy can
// then span every image row at once; the x shift wraps one element across
// each row boundary, repaired afterwards, and the shifted-out column is
// zeroed per row.
template <typename S>
void im2col_k3(const S* x, int c_in, int n, int h, int w, std::int64_t ld,
               S* col) {
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      const int a = std::max(0, -dy);
      const int b = std::min(h - 1, h - 1 - dy);
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        S* row = col + ((static_cast<std::int64_t>(ci) * 3 + ky) * 3 + kx) * ld;
        for (int t = 0; t < n; ++t) {
          const S* frame = x + (static_cast<std::int64_t>(ci) * n + t) * hw;
          S* dst = row + static_cast<std::int64_t>(t) * hw;
          if (a > 0) std::fill(dst, dst + static_cast<std::int64_t>(a) * w, S(0));
          if (b < h - 1)
            std::fill(dst + (static_cast<std::int64_t>(b) + 1) * w, dst + hw, S(0));
          if (b < a) continue;
          const std::int64_t span = (static_cast<std::int64_t>(b - a) + 1) * w;
          const S* src = frame + static_cast<std::int64_t>(a + dy) * w;
          S* out = dst + static_cast<std::int64_t>(a) * w;
          if (dx == 0) {
            std::memcpy(out, src, span * sizeof(S));
          } else if (dx > 0) {
            std::memcpy(out, src + 1, (span - 1) * sizeof(S));
            for (int y2 = a; y2 <= b; ++y2)
              dst[static_cast<std::int64_t>(y2) * w + w - 1] = S(0);
          } else {
            std::memcpy(out + 1, src, (span - 1) * sizeof(S));
            for (int y2 = a; y2 <= b; ++y2)
              dst[static_cast<std::int64_t>(y2) * w] = S(0);
          }
        }
      }
    }
  }
}

// Lays out one sample (c_in, n, h, w) as a (c_in*k*k, n*h2*w2) matrix,
// row r = (ci, ky, kx), column = (t, y2, x2), rows ld apart.
template <typename S>
void im2col(const S* x, int c_in, int n, int h, int w, int k, int stride,
            int pad, int h2, int w2, S* col, std::int64_t ld) {
  if (k == 3 && stride == 1 && pad == 1 && w >= 2) {
    im2col_k3(x, c_in, n, h, w, ld, col);
    return;
  }
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int64_t l_frame = static_cast<std::int64_t>(h2) * w2;
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * ld;
        for (int t = 0; t < n; ++t) {
          const S* frame = x + (static_cast<std::int64_t>(ci) * n + t) * hw;
          S* dst = row + static_cast<std::int64_t>(t) * l_frame;
          for (int y2 = 0; y2 < h2; ++y2) {
            const int y = y2 * stride - pad + ky;
            S* out_row = dst + static_cast<std::int64_t>(y2) * w2;
            if (y < 0 || y >= h) {
              std::fill(out_row, out_row + w2, S(0));
              continue;
            }
            const S* in_row = frame + static_cast<std::int64_t>(y) * w;
            if (stride == 1) {
              const int x0 = -pad + kx;
              int lo = std::max(0, -x0);
              int hi = std::min(w2, w - x0);
              if (lo > 0) std::fill(out_row, out_row + lo, S(0));
              if (hi > lo)
                std::memcpy(out_row + lo, in_row + x0 + lo,
                            static_cast<std::size_t>(hi - lo) * sizeof(S));
              if (hi < w2) std::fill(out_row + std::max(hi, lo), out_row + w2, S(0));
            } else {
              for (int x2 = 0; x2 < w2; ++x2) {
                const int xx = x2 * stride - pad + kx;
                out_row[x2] = (xx < 0 || xx >= w) ? S(0) : in_row[xx];
              }
            }
          }
        }
      }
    }
  }
}

// Inverse of im2col_k3: one vector add per plane, then the elements that the
// shifted bulk add smeared across a row boundary are backed out, since their
// true targets fall outside the row (they matched padding on the way in).
template <typename S>
void col2im_add_k3(const S* col, int c_in, int n, int h, int w, std::int64_t ld,
                   S* x) {
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      const int a = std::max(0, -dy);
      const int b = std::min(h - 1, h - 1 - dy);
      if (b < a) continue;
      const std::int64_t span = (static_cast<std::int64_t>(b - a) + 1) * w;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const S* row = col + ((static_cast<std::int64_t>(ci) * 3 + ky) * 3 + kx) * ld;
        for (int t = 0; t < n; ++t) {
          S* frame = x + (static_cast<std::int64_t>(ci) * n + t) * hw;
          const S* src = row + static_cast<std::int64_t>(t) * hw +
                         static_cast<std::int64_t>(a) * w;
          S* dst = frame + static_cast<std::int64_t>(a + dy) * w;
          if (dx == 0) {
            VecMap<S>(dst, span) += ConstVecMap<S>(src, span);
          } else if (dx > 0) {
            VecMap<S>(dst + 1, span - 1) += ConstVecMap<S>(src, span - 1);
            for (int y2 = a; y2 < b; ++y2)
              dst[(static_cast<std::int64_t>(y2 - a) + 1) * w] -=
                  src[static_cast<std::int64_t>(y2 - a) * w + w - 1];
          } else {
            VecMap<S>(dst, span - 1) += ConstVecMap<S>(src + 1, span - 1);
            for (int y2 = a + 1; y2 <= b; ++y2)
              dst[static_cast<std::int64_t>(y2 - a) * w - 1] -=
                  src[static_cast<std::int64_t>(y2 - a) * w];
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back onto the input layout.
template <typename S>
void col2im_add(const S* col, int c_in, int n, int h, int w, int k, int stride,
                int pad, int h2, int w2, S* x, std::int64_t ld) {
  if (k == 3 && stride == 1 && pad == 1 && w >= 2) {
    col2im_add_k3(col, c_in, n, h, w, ld, x);
    return;
  }
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int64_t l_frame = static_cast<std::int64_t>(h2) * w2;
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * ld;
        for (int t = 0; t < n; ++t) {
          S* frame = x + (static_cast<std::int64_t>(ci) * n + t) * hw;
          const S* src = row + static_cast<std::int64_t>(t) * l_frame;
          for (int y2 = 0; y2 < h2; ++y2) {
            const int y = y2 * stride - pad + ky;
            if (y < 0 || y >= h) continue;
            S* in_row = frame + static_cast<std::int64_t>(y) * w;
            const S* src_row = src + static_cast<std::int64_t>(y2) * w2;
            if (stride == 1) {
              const int x0 = -pad + kx;
              const int lo = std::max(0, -x0);
              const int hi = std::min(w2, w - x0);
              for (int x2 = lo; x2 < hi; ++x2) in_row[x0 + x2] += src_row[x2];
            } else {
              for (int x2 = 0; x2 < w2; ++x2) {
                const int xx = x2 * stride - pad + kx;
                if (xx >= 0 && xx < w) in_row[xx] += src_row[x2];
              }
            }
          }
        }
      }
    }
  }
}

struct ConvDims {
  int b, c_in, n, h, w, h2, w2;
  std::int64_t l;   // columns per sample: n * h2 * w2
  std::int64_t ld;  // leading dimension of the column matrix
};

template <typename S>
ConvDims conv_dims(const Tensor<S>& x, const ConvSpec<S>& spec) {
  const int r = x.rank();
  check_shape(r == 4 || r == 5, "conv expects (c,n,h,w) or (b,c,n,h,w)");
  const int off = r - 4;
  ConvDims d;
  d.b = off ? x.dim(0) : 1;
  d.c_in = x.dim(off);
  d.n = x.dim(off + 1);
  d.h = x.dim(off + 2);
  d.w = x.dim(off + 3);
  check_shape(d.c_in == spec.in_channels,
              "conv input has " + std::to_string(d.c_in) + " channels, spec wants " +
                  std::to_string(spec.in_channels));
  check_shape(spec.weights.shape() ==
                  Shape({spec.out_channels, spec.in_channels, 1, spec.kernel,
                         spec.kernel}),
              "conv weight shape mismatch");
  d.h2 = conv_out_extent(d.h, spec.kernel, spec.stride, spec.padding);
  d.w2 = conv_out_extent(d.w, spec.kernel, spec.stride, spec.padding);
  d.l = static_cast<std::int64_t>(d.n) * d.h2 * d.w2;
  d.ld = padded_ld(d.l);
  return d;
}

}  // namespace detail

// Per-frame convolution over (b, c_in, n, h, w); rank-4 input is treated
// as batch 1. One im2col + GEMM per sample; the GEMM writes straight into
// the output sample, whose (c_out, n, h2, w2) layout matches the product.
// The column matrix uses a padded leading dimension so its rows don't land
// on power-of-two strides.
template <typename S>
Tensor<S> conv2d_per_frame(const Tensor<S>& x, const ConvSpec<S>& spec) {
  using namespace detail;
  const ConvDims d = conv_dims(x, spec);
  const int rows = spec.in_channels * spec.kernel * spec.kernel;
  Shape out_shape = x.rank() == 5
                        ? Shape({d.b, spec.out_channels, d.n, d.h2, d.w2})
                        : Shape({spec.out_channels, d.n, d.h2, d.w2});
  Tensor<S> y = Tensor<S>::uninit(out_shape);

  auto& colbuf = conv_scratch<S>(static_cast<std::size_t>(rows) * d.ld);
  const std::int64_t in_sample = static_cast<std::int64_t>(d.c_in) * d.n * d.h * d.w;
  const std::int64_t out_sample = static_cast<std::int64_t>(spec.out_channels) * d.l;

  for (int bi = 0; bi < d.b; ++bi) {
    im2col(x.data() + bi * in_sample, d.c_in, d.n, d.h, d.w, spec.kernel,
           spec.stride, spec.padding, d.h2, d.w2, colbuf.data(), d.ld);
    S* out = y.data() + bi * out_sample;
    gemm_nn(spec.weights.data(), rows, colbuf.data(), d.ld, out, d.l,
            spec.out_channels, rows, static_cast<int>(d.l));
    if (!spec.bias.empty()) {
      MatMap<S> om(out, spec.out_channels, d.l);
      for (int co = 0; co < spec.out_channels; ++co)
        om.row(co).array() += spec.bias[co];
    }
  }
  return y;
}

// Gradients for input, weights and bias. Pass nullptr to skip one. The
// column matrix is rebuilt per sample, and samples are reduced in a fixed
// order, so repeated runs produce identical accumulations.
template <typename S>
void conv2d_per_frame_backward(const Tensor<S>& x, const ConvSpec<S>& spec,
                               const Tensor<S>& gy, Tensor<S>* gx,
                               Tensor<S>* gw, Tensor<S>* gb) {
  using namespace detail;
  const ConvDims d = conv_dims(x, spec);
  const int rows = spec.in_channels * spec.kernel * spec.kernel;
  check_shape(gy.numel() ==
                  static_cast<std::int64_t>(d.b) * spec.out_channels * d.l,
              "conv backward: upstream gradient extent mismatch");

  if (gx) *gx = Tensor<S>(x.shape());
  if (gw) *gw = Tensor<S>(spec.weights.shape());
  if (gb) *gb = Tensor<S>({spec.out_channels});

  auto& colbuf = conv_scratch<S>(static_cast<std::size_t>(rows) * d.ld * 2);
  S* col = colbuf.data();
  S* colg = colbuf.data() + static_cast<std::int64_t>(rows) * d.ld;

  const std::int64_t in_sample = static_cast<std::int64_t>(d.c_in) * d.n * d.h * d.w;
  const std::int64_t out_sample = static_cast<std::int64_t>(spec.out_channels) * d.l;

  for (int bi = 0; bi < d.b; ++bi) {
    const S* g = gy.data() + bi * out_sample;
    if (gw) {
      im2col(x.data() + bi * in_sample, d.c_in, d.n, d.h, d.w, spec.kernel,
             spec.stride, spec.padding, d.h2, d.w2, col, d.ld);
      gemm_nt(g, d.l, col, d.ld, gw->data(), rows, spec.out_channels,
              static_cast<int>(d.l), rows, /*accumulate=*/true);
    }
    if (gb) {
      ConstMatMap<S> gm(g, spec.out_channels, d.l);
      for (int co = 0; co < spec.out_channels; ++co)
        (*gb)[co] += gm.row(co).sum();
    }
    if (gx) {
      gemm_tn(spec.weights.data(), rows, g, d.l, colg, d.ld, rows,
              spec.out_channels, static_cast<int>(d.l));
      col2im_add(colg, d.c_in, d.n, d.h, d.w, spec.kernel, spec.stride,
                 spec.padding, d.h2, d.w2, gx->data() + bi * in_sample, d.ld);
    }
  }
}

}  // namespace seqdab
