#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

namespace detail {

template <typename S>
using MatNN = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMapNN = Eigen::Map<MatNN<S>>;
template <typename S>
using ConstMatMapNN = Eigen::Map<const MatNN<S>>;
template <typename S>
using VecMapNN = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMapNN = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

struct ActExtents {
  int b, c;
  std::int64_t inner;  // n*h*w
};

template <typename S>
ActExtents act_extents(const Tensor<S>& x) {
  const int r = x.rank();
  check_shape(r == 4 || r == 5, "expected (c,n,h,w) or (b,c,n,h,w)");
  const int off = r - 4;
  ActExtents e;
  e.b = off ? x.dim(0) : 1;
  e.c = x.dim(off);
  e.inner = static_cast<std::int64_t>(x.dim(off + 1)) * x.dim(off + 2) *
            x.dim(off + 3);
  return e;
}

}  // namespace detail

// ---------------------------------------------------------------- relu

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::uninit(x.shape());
  y.map() = x.map().max(S(0));
  return y;
}

template <typename S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& gy) {
  check_shape(x.same_shape(gy), "relu backward shape mismatch");
  Tensor<S> gx = Tensor<S>::uninit(x.shape());
  gx.map() = (x.map() > S(0)).select(gy.map(), S(0));
  return gx;
}

// ------------------------------------------------------ batch norm

// Per-channel statistics are pooled over batch, temporal and spatial axes.
// Variance is biased everywhere, including the running estimate.
template <typename S>
struct BnState {
  Tensor<S> running_mean;
  Tensor<S> running_var;

  static BnState make(int channels) {
    BnState s;
    s.running_mean = Tensor<S>({channels});
    s.running_var = Tensor<S>::full({channels}, S(1));
    return s;
  }
};

struct BnCtx {
  std::vector<double> mean, inv_std;
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, BnState<S>* state, bool training,
                     BnCtx* ctx = nullptr, double eps = kBnEps,
                     double momentum = kBnMomentum) {
  const auto e = detail::act_extents(x);
  check_shape(gamma.numel() == e.c && beta.numel() == e.c,
              "batch norm affine extent mismatch");
  Tensor<S> y = Tensor<S>::uninit(x.shape());
  const std::int64_t chan_stride = e.inner;
  const std::int64_t sample_stride = static_cast<std::int64_t>(e.c) * e.inner;

  std::vector<double> mean(static_cast<std::size_t>(e.c));
  std::vector<double> inv_std(static_cast<std::size_t>(e.c));

  if (training) {
    const double count = static_cast<double>(e.b) * e.inner;
    check_shape(count > 0, "batch norm over empty input");
    for (int c = 0; c < e.c; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < e.b; ++b) {
        detail::ConstVecMapNN<S> p(x.data() + b * sample_stride + c * chan_stride,
                                   e.inner);
        s += p.template cast<double>().sum();
        s2 += p.template cast<double>().square().sum();
      }
      const double mu = s / count;
      double var = s2 / count - mu * mu;
      if (var < 0.0) var = 0.0;
      mean[static_cast<std::size_t>(c)] = mu;
      inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
      if (state) {
        state->running_mean[c] = static_cast<S>(
            (1.0 - momentum) * static_cast<double>(state->running_mean[c]) +
            momentum * mu);
        state->running_var[c] = static_cast<S>(
            (1.0 - momentum) * static_cast<double>(state->running_var[c]) +
            momentum * var);
      }
    }
  } else {
    check(state != nullptr, "batch norm eval needs running statistics");
    for (int c = 0; c < e.c; ++c) {
      mean[static_cast<std::size_t>(c)] = static_cast<double>(state->running_mean[c]);
      inv_std[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(static_cast<double>(state->running_var[c]) + eps);
    }
  }

  for (int b = 0; b < e.b; ++b) {
    for (int c = 0; c < e.c; ++c) {
      const S* p = x.data() + b * sample_stride + c * chan_stride;
      S* q = y.data() + b * sample_stride + c * chan_stride;
      const S scale = static_cast<S>(static_cast<double>(gamma[c]) *
                                     inv_std[static_cast<std::size_t>(c)]);
      const S shift = static_cast<S>(
          static_cast<double>(beta[c]) -
          static_cast<double>(gamma[c]) * mean[static_cast<std::size_t>(c)] *
              inv_std[static_cast<std::size_t>(c)]);
      detail::VecMapNN<S>(q, e.inner) =
          detail::ConstVecMapNN<S>(p, e.inner) * scale + shift;
    }
  }

  if (ctx) {
    ctx->mean = std::move(mean);
    ctx->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
void batch_norm_backward(const Tensor<S>& x, const Tensor<S>& gamma,
                         const BnCtx& ctx, const Tensor<S>& gy, Tensor<S>* gx,
                         Tensor<S>* ggamma, Tensor<S>* gbeta) {
  const auto e = detail::act_extents(x);
  check_shape(x.same_shape(gy), "batch norm backward shape mismatch");
  const std::int64_t chan_stride = e.inner;
  const std::int64_t sample_stride = static_cast<std::int64_t>(e.c) * e.inner;
  const double count = static_cast<double>(e.b) * e.inner;

  if (gx) *gx = Tensor<S>::uninit(x.shape());
  if (ggamma) *ggamma = Tensor<S>::uninit({e.c});
  if (gbeta) *gbeta = Tensor<S>::uninit({e.c});

  for (int c = 0; c < e.c; ++c) {
    const double mu = ctx.mean[static_cast<std::size_t>(c)];
    const double istd = ctx.inv_std[static_cast<std::size_t>(c)];
    double sum_g = 0.0, sum_gx = 0.0;
    for (int b = 0; b < e.b; ++b) {
      detail::ConstVecMapNN<S> px(x.data() + b * sample_stride + c * chan_stride,
                                  e.inner);
      detail::ConstVecMapNN<S> pg(gy.data() + b * sample_stride + c * chan_stride,
                                  e.inner);
      sum_g += pg.template cast<double>().sum();
      sum_gx += (pg.template cast<double>() * (px.template cast<double>() - mu))
                    .sum() *
                istd;
    }
    if (ggamma) (*ggamma)[c] = static_cast<S>(sum_gx);
    if (gbeta) (*gbeta)[c] = static_cast<S>(sum_g);
    if (gx) {
      const double k = static_cast<double>(gamma[c]) * istd;
      const double mg = sum_g / count;
      const double mgx = sum_gx / count;
      // k*(g - mg - xhat*mgx) regrouped into one fused scale-and-shift pass.
      const S a = static_cast<S>(k);
      const S bx = static_cast<S>(-k * mgx * istd);
      const S c0 = static_cast<S>(-k * mg + k * mgx * istd * mu);
      for (int b = 0; b < e.b; ++b) {
        detail::ConstVecMapNN<S> px(x.data() + b * sample_stride + c * chan_stride,
                                    e.inner);
        detail::ConstVecMapNN<S> pg(gy.data() + b * sample_stride + c * chan_stride,
                                    e.inner);
        detail::VecMapNN<S>(gx->data() + b * sample_stride + c * chan_stride,
                            e.inner) = pg * a + px * bx + c0;
      }
    }
  }
}

// ------------------------------------------------- concat / split

// Concatenation along the channel axis.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  const auto ea = detail::act_extents(a);
  const auto eb = detail::act_extents(b);
  check_shape(ea.b == eb.b && ea.inner == eb.inner,
              "concat_channels: batch/spatial extents differ");
  const int r = a.rank();
  const int off = r - 4;
  check_shape(a.dim(off + 1) == b.dim(off + 1) &&
                  a.dim(off + 2) == b.dim(off + 2) &&
                  a.dim(off + 3) == b.dim(off + 3),
              "concat_channels: trailing extents differ");
  Shape s = a.shape();
  s[static_cast<std::size_t>(off)] += eb.c;
  Tensor<S> y = Tensor<S>::uninit(s);
  const std::int64_t block_a = static_cast<std::int64_t>(ea.c) * ea.inner;
  const std::int64_t block_b = static_cast<std::int64_t>(eb.c) * eb.inner;
  for (int bi = 0; bi < ea.b; ++bi) {
    std::memcpy(y.data() + bi * (block_a + block_b), a.data() + bi * block_a,
                static_cast<std::size_t>(block_a) * sizeof(S));
    std::memcpy(y.data() + bi * (block_a + block_b) + block_a,
                b.data() + bi * block_b,
                static_cast<std::size_t>(block_b) * sizeof(S));
  }
  return y;
}

template <typename S>
void split_channels(const Tensor<S>& y, int c_a, Tensor<S>* a, Tensor<S>* b) {
  const auto e = detail::act_extents(y);
  check_shape(c_a > 0 && c_a < e.c, "split_channels: bad split point");
  const int off = y.rank() - 4;
  Shape sa = y.shape(), sb = y.shape();
  sa[static_cast<std::size_t>(off)] = c_a;
  sb[static_cast<std::size_t>(off)] = e.c - c_a;
  *a = Tensor<S>::uninit(sa);
  *b = Tensor<S>::uninit(sb);
  const std::int64_t block_a = static_cast<std::int64_t>(c_a) * e.inner;
  const std::int64_t block_b = static_cast<std::int64_t>(e.c - c_a) * e.inner;
  for (int bi = 0; bi < e.b; ++bi) {
    std::memcpy(a->data() + bi * block_a, y.data() + bi * (block_a + block_b),
                static_cast<std::size_t>(block_a) * sizeof(S));
    std::memcpy(b->data() + bi * block_b,
                y.data() + bi * (block_a + block_b) + block_a,
                static_cast<std::size_t>(block_b) * sizeof(S));
  }
}

// ------------------------------------------------- global average pool

// (b, c, n, h, w) -> (b, c), mean over the temporal and spatial axes.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  const auto e = detail::act_extents(x);
  Tensor<S> y = Tensor<S>::uninit({e.b, e.c});
  for (int b = 0; b < e.b; ++b) {
    for (int c = 0; c < e.c; ++c) {
      detail::ConstVecMapNN<S> p(
          x.data() + (static_cast<std::int64_t>(b) * e.c + c) * e.inner, e.inner);
      y(b, c) = static_cast<S>(p.template cast<double>().sum() /
                               static_cast<double>(e.inner));
    }
  }
  return y;
}

template <typename S>
Tensor<S> global_avg_pool_backward(const Shape& x_shape, const Tensor<S>& gy) {
  Tensor<S> gx = Tensor<S>::uninit(x_shape);
  const auto e = detail::act_extents(gx);
  check_shape(gy.numel() == static_cast<std::int64_t>(e.b) * e.c,
              "pool backward extent mismatch");
  for (int b = 0; b < e.b; ++b) {
    for (int c = 0; c < e.c; ++c) {
      S* p = gx.data() + (static_cast<std::int64_t>(b) * e.c + c) * e.inner;
      const S g = static_cast<S>(static_cast<double>(gy[b * e.c + c]) /
                                 static_cast<double>(e.inner));
      detail::VecMapNN<S>(p, e.inner).setConstant(g);
    }
  }
  return gx;
}

// ------------------------------------------------------ max pool

inline int pool_out_extent(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  check_shape(span >= 0, "pool window larger than padded input");
  return span / stride + 1;
}

// Per-frame spatial max pool; saves flat argmax offsets for backward.
template <typename S>
Tensor<S> max_pool_per_frame(const Tensor<S>& x, int k, int stride, int pad,
                             std::vector<std::int64_t>* argmax = nullptr) {
  const int r = x.rank();
  check_shape(r == 4 || r == 5, "max pool expects (c,n,h,w) or (b,c,n,h,w)");
  const int off = r - 4;
  const int b = off ? x.dim(0) : 1;
  const int c = x.dim(off), n = x.dim(off + 1);
  const int h = x.dim(off + 2), w = x.dim(off + 3);
  const int h2 = pool_out_extent(h, k, stride, pad);
  const int w2 = pool_out_extent(w, k, stride, pad);
  Shape s = x.shape();
  s[s.size() - 2] = h2;
  s[s.size() - 1] = w2;
  Tensor<S> y(s);
  if (argmax) argmax->assign(static_cast<std::size_t>(y.numel()), 0);

  std::int64_t oi = 0;
  for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(b) * c * n;
       ++plane) {
    const S* in = x.data() + plane * h * w;
    for (int y2 = 0; y2 < h2; ++y2) {
      for (int x2 = 0; x2 < w2; ++x2, ++oi) {
        S best = std::numeric_limits<S>::lowest();
        std::int64_t best_at = 0;
        for (int ky = 0; ky < k; ++ky) {
          const int yy = y2 * stride - pad + ky;
          if (yy < 0 || yy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int xx = x2 * stride - pad + kx;
            if (xx < 0 || xx >= w) continue;
            const std::int64_t at = static_cast<std::int64_t>(yy) * w + xx;
            if (in[at] > best) {
              best = in[at];
              best_at = at;
            }
          }
        }
        y[oi] = best;
        if (argmax) (*argmax)[static_cast<std::size_t>(oi)] = plane * h * w + best_at;
      }
    }
  }
  return y;
}

template <typename S>
Tensor<S> max_pool_backward(const Shape& x_shape, const Tensor<S>& gy,
                            const std::vector<std::int64_t>& argmax) {
  Tensor<S> gx(x_shape);
  check_shape(static_cast<std::int64_t>(argmax.size()) == gy.numel(),
              "max pool backward argmax mismatch");
  for (std::int64_t i = 0; i < gy.numel(); ++i)
    gx[argmax[static_cast<std::size_t>(i)]] += gy[i];
  return gx;
}

// -------------------------------------------------------- linear

// x (b, c) * W (k, c)^T + bias (k) -> (b, k).
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  check_shape(x.rank() == 2 && w.rank() == 2, "linear expects rank-2 operands");
  const int b = x.dim(0), c = x.dim(1), k = w.dim(0);
  check_shape(w.dim(1) == c, "linear extent mismatch");
  Tensor<S> y({b, k});
  detail::ConstMatMapNN<S> xm(x.data(), b, c);
  detail::ConstMatMapNN<S> wm(w.data(), k, c);
  detail::MatMapNN<S> ym(y.data(), b, k);
  ym.noalias() = xm * wm.transpose();
  if (!bias.empty()) {
    check_shape(bias.numel() == k, "linear bias extent mismatch");
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < k; ++j) y(i, j) += bias[j];
  }
  return y;
}

template <typename S>
void linear_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gy,
                     Tensor<S>* gx, Tensor<S>* gw, Tensor<S>* gb) {
  const int b = x.dim(0), c = x.dim(1), k = w.dim(0);
  check_shape(gy.rank() == 2 && gy.dim(0) == b && gy.dim(1) == k,
              "linear backward shape mismatch");
  detail::ConstMatMapNN<S> xm(x.data(), b, c);
  detail::ConstMatMapNN<S> wm(w.data(), k, c);
  detail::ConstMatMapNN<S> gm(gy.data(), b, k);
  if (gx) {
    *gx = Tensor<S>({b, c});
    detail::MatMapNN<S> m(gx->data(), b, c);
    m.noalias() = gm * wm;
  }
  if (gw) {
    *gw = Tensor<S>({k, c});
    detail::MatMapNN<S> m(gw->data(), k, c);
    m.noalias() = gm.transpose() * xm;
  }
  if (gb) {
    *gb = Tensor<S>({k});
    for (int j = 0; j < k; ++j) (*gb)[j] = static_cast<S>(gm.col(j).sum());
  }
}

// ------------------------------------- softmax cross entropy

// Mean cross entropy over the batch, log-sum-exp stabilised. The
// gradient helper folds the 1/b factor in.
template <typename S>
double softmax_cross_entropy(const Tensor<S>& logits,
                             const std::vector<int>& labels,
                             Tensor<S>* glogits = nullptr) {
  check_shape(logits.rank() == 2, "cross entropy expects (b, k) logits");
  const int b = logits.dim(0), k = logits.dim(1);
  check_shape(static_cast<int>(labels.size()) == b,
              "cross entropy label count mismatch");
  if (glogits) *glogits = Tensor<S>({b, k});
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const S* row = logits.data() + static_cast<std::int64_t>(i) * k;
    const int y = labels[static_cast<std::size_t>(i)];
    check_shape(y >= 0 && y < k, "label out of range");
    double mx = static_cast<double>(row[0]);
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - static_cast<double>(row[y]);
    if (glogits) {
      S* grow = glogits->data() + static_cast<std::int64_t>(i) * k;
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(static_cast<double>(row[j]) - log_z);
        grow[j] = static_cast<S>((p - (j == y ? 1.0 : 0.0)) / b);
      }
    }
  }
  return total / b;
}

template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& logits) {
  check_shape(logits.rank() == 2, "argmax expects (b, k)");
  const int b = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const S* row = logits.data() + static_cast<std::int64_t>(i) * k;
    out[static_cast<std::size_t>(i)] =
        static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace seqdab
