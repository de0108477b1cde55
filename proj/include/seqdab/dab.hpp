#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "seqdab/errors.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

enum class DabMode { Signed, Magnitude, Windowed, Disabled };

struct DabConfig {
  DabMode mode = DabMode::Signed;
  int window = 0;  // m, used by Windowed only
};

inline std::string to_string(DabMode m) {
  switch (m) {
    case DabMode::Signed: return "signed";
    case DabMode::Magnitude: return "magnitude";
    case DabMode::Windowed: return "windowed";
    case DabMode::Disabled: return "disabled";
  }
  return "?";
}

inline std::string to_string(const DabConfig& c) {
  if (c.mode == DabMode::Windowed)
    return "windowed:" + std::to_string(c.window);
  return to_string(c.mode);
}

// Accepts "signed", "magnitude", "disabled", "windowed:<m>".
inline DabConfig parse_dab_config(const std::string& s) {
  DabConfig c;
  if (s == "signed") {
    c.mode = DabMode::Signed;
  } else if (s == "magnitude") {
    c.mode = DabMode::Magnitude;
  } else if (s == "disabled") {
    c.mode = DabMode::Disabled;
  } else if (s.rfind("windowed:", 0) == 0) {
    c.mode = DabMode::Windowed;
    try {
      c.window = std::stoi(s.substr(9));
    } catch (const std::exception&) {
      throw ConfigError("bad window in dab mode '" + s + "'");
    }
    check_config(c.window >= 0, "dab window must be >= 0");
  } else {
    throw ConfigError("unknown dab mode '" + s + "'");
  }
  return c;
}

namespace detail {

struct DabExtents {
  std::int64_t outer;  // batch * channels
  int n;               // temporal extent
  std::int64_t hw;     // spatial elements per slice
};

#if defined(__AVX512F__)
// Streaming-store panel kernel for the signed fast path. Requires hw to
// be a multiple of 16 and o to be 64-byte aligned; caller issues the
// sfence after the last panel.
inline void dab_signed_panel_stream(const float* f, float* o, int n,
                                    std::int64_t hw) {
  for (std::int64_t j0 = 0; j0 < hw; j0 += 16) {
    __m512 a = _mm512_loadu_ps(f + (n - 1) * hw + j0);
    _mm512_stream_ps(o + (n - 1) * hw + j0, a);
    for (int i = n - 2; i >= 1; --i) {
      const __m512 v = _mm512_loadu_ps(f + i * hw + j0);
      const __m512 c = _mm512_set1_ps(static_cast<float>(n - 1 - i));
      _mm512_stream_ps(o + i * hw + j0, _mm512_fmsub_ps(c, v, a));
      a = _mm512_add_ps(a, v);
    }
    const __m512 v = _mm512_loadu_ps(f + j0);
    const __m512 c = _mm512_set1_ps(static_cast<float>(n - 1));
    _mm512_stream_ps(o + j0, _mm512_fmsub_ps(c, v, a));
  }
}
#endif

template <typename S>
DabExtents dab_extents(const Tensor<S>& x) {
  const int r = x.rank();
  check_shape(r == 4 || r == 5, "dab expects (c,n,h,w) or (b,c,n,h,w)");
  const int off = r - 4;
  DabExtents e;
  e.outer = (off ? x.dim(0) : 1) * static_cast<std::int64_t>(x.dim(off));
  e.n = x.dim(off + 1);
  e.hw = static_cast<std::int64_t>(x.dim(off + 2)) * x.dim(off + 3);
  check_shape(e.n >= 2, "dab requires temporal extent n >= 2");
  return e;
}

inline int pair_index(int i, int k, int n) {
  return i * (2 * n - i - 1) / 2 + (k - i - 1);
}

}  // namespace detail

// Pairwise signs saved by the magnitude forward pass for its backward pass.
struct DabSigns {
  std::vector<std::int8_t> s;  // (outer, pair(i<k), hw)
  int n = 0;
  std::int64_t hw = 0;
};

// Reference path: direct translation of the accumulation formulas, one
// full slice traversal per (i, k) term.
template <typename S>
Tensor<S> dab_forward_naive(const Tensor<S>& fc, const DabConfig& cfg) {
  const auto e = detail::dab_extents(fc);
  Tensor<S> out(fc.shape());
  if (cfg.mode == DabMode::Disabled) return out;
  const int n = e.n;
  const std::int64_t hw = e.hw;
  const std::int64_t stride = static_cast<std::int64_t>(n) * hw;
  for (std::int64_t p = 0; p < e.outer; ++p) {
    const S* fl = fc.data() + p * stride + (n - 1) * hw;
    S* ol = out.data() + p * stride + (n - 1) * hw;
    for (std::int64_t j = 0; j < hw; ++j) ol[j] = fl[j];
  }
  for (int i = 0; i < n - 1; ++i) {
    const int k_lo = (cfg.mode == DabMode::Windowed) ? i : i + 1;
    const int k_hi = (cfg.mode == DabMode::Windowed)
                         ? std::min(i + cfg.window, n - 1)
                         : n - 1;
    for (int k = k_lo; k <= k_hi; ++k) {
      for (std::int64_t p = 0; p < e.outer; ++p) {
        const S* fi = fc.data() + p * stride + i * hw;
        const S* fk = fc.data() + p * stride + k * hw;
        S* oi = out.data() + p * stride + i * hw;
        if (cfg.mode == DabMode::Magnitude) {
          for (std::int64_t j = 0; j < hw; ++j)
            oi[j] += std::abs(fi[j] - fk[j]);
        } else {
          for (std::int64_t j = 0; j < hw; ++j) oi[j] += fi[j] - fk[j];
        }
      }
    }
  }
  return out;
}

// Optimized path. Signed mode makes one pass per panel, carrying the
// suffix sum in a register tile, with streaming stores when the slice
// layout allows them; the other modes use fused per-pair loops.
// Identical values to the reference path up to floating-point
// association.
template <typename S>
Tensor<S> dab_forward(const Tensor<S>& fc, const DabConfig& cfg,
                      DabSigns* signs = nullptr) {
  const auto e = detail::dab_extents(fc);
  const bool writes_all =
      cfg.mode == DabMode::Signed || cfg.mode == DabMode::Windowed;
  Tensor<S> out = writes_all ? Tensor<S>::uninit(fc.shape())
                             : Tensor<S>(fc.shape());
  const int n = e.n;
  const std::int64_t hw = e.hw;

  if (cfg.mode == DabMode::Disabled) return out;

  if (signs) {
    check(cfg.mode == DabMode::Magnitude, "signs only exist in magnitude mode");
    signs->n = n;
    signs->hw = hw;
    signs->s.assign(static_cast<std::size_t>(e.outer * (n * (n - 1) / 2) * hw), 0);
  }

  if (cfg.mode == DabMode::Signed) {
#if defined(__AVX512F__)
    if constexpr (std::is_same_v<S, float>) {
      if (hw % 16 == 0 &&
          reinterpret_cast<std::uintptr_t>(out.data()) % 64 == 0) {
        for (std::int64_t p = 0; p < e.outer; ++p)
          detail::dab_signed_panel_stream(fc.data() + p * n * hw,
                                          out.data() + p * n * hw, n, hw);
        _mm_sfence();
        return out;
      }
    }
#endif
    for (std::int64_t p = 0; p < e.outer; ++p) {
      const S* f = fc.data() + p * n * hw;
      S* o = out.data() + p * n * hw;
      constexpr std::int64_t T = 32;
      S acc[T];
      for (std::int64_t j0 = 0; j0 < hw; j0 += T) {
        const std::int64_t t = std::min(T, hw - j0);
        const S* __restrict fl = f + (n - 1) * hw + j0;
        S* __restrict ol = o + (n - 1) * hw + j0;
        for (std::int64_t j = 0; j < t; ++j) {
          const S v = fl[j];
          ol[j] = v;
          acc[j] = v;
        }
        for (int i = n - 2; i >= 1; --i) {
          const S* __restrict fi = f + i * hw + j0;
          S* __restrict oi = o + i * hw + j0;
          const S c = static_cast<S>(n - 1 - i);
          for (std::int64_t j = 0; j < t; ++j) {
            const S v = fi[j];
            oi[j] = c * v - acc[j];
            acc[j] += v;
          }
        }
        {
          const S* __restrict fi = f + j0;
          S* __restrict oi = o + j0;
          const S c = static_cast<S>(n - 1);
          for (std::int64_t j = 0; j < t; ++j) oi[j] = c * fi[j] - acc[j];
        }
      }
    }
    return out;
  }

  for (std::int64_t p = 0; p < e.outer; ++p) {
    const S* f = fc.data() + p * n * hw;
    S* o = out.data() + p * n * hw;

    for (std::int64_t j = 0; j < hw; ++j) o[(n - 1) * hw + j] = f[(n - 1) * hw + j];

    if (cfg.mode == DabMode::Magnitude) {
      for (int i = 0; i < n - 1; ++i) {
        const S* fi = f + i * hw;
        S* oi = o + i * hw;
        for (int k = i + 1; k < n; ++k) {
          const S* fk = f + k * hw;
          if (signs) {
            std::int8_t* sp =
                signs->s.data() +
                (p * (n * (n - 1) / 2) + detail::pair_index(i, k, n)) * hw;
            for (std::int64_t j = 0; j < hw; ++j) {
              const S d = fi[j] - fk[j];
              sp[j] = (d > S(0)) ? 1 : ((d < S(0)) ? -1 : 0);
              oi[j] += std::abs(d);
            }
          } else {
            for (std::int64_t j = 0; j < hw; ++j) oi[j] += std::abs(fi[j] - fk[j]);
          }
        }
      }
    } else {  // Windowed
      for (int i = 0; i < n - 1; ++i) {
        const S* fi = f + i * hw;
        S* oi = o + i * hw;
        const int k_hi = std::min(i + cfg.window, n - 1);
        const S c = static_cast<S>(k_hi - i);
        for (std::int64_t j = 0; j < hw; ++j) oi[j] = c * fi[j];
        for (int k = i + 1; k <= k_hi; ++k) {
          const S* fk = f + k * hw;
          for (std::int64_t j = 0; j < hw; ++j) oi[j] -= fk[j];
        }
      }
    }
  }
  return out;
}

// Gradient of the accumulation with respect to the input slices.
// Signed and windowed modes use closed forms; magnitude replays the
// saved pairwise signs.
template <typename S>
Tensor<S> dab_backward(const Tensor<S>& gs, const DabConfig& cfg,
                       const DabSigns* signs = nullptr) {
  const auto e = detail::dab_extents(gs);
  Tensor<S> gc(gs.shape());
  const int n = e.n;
  const std::int64_t hw = e.hw;

  if (cfg.mode == DabMode::Disabled) return gc;
  if (cfg.mode == DabMode::Magnitude) {
    check(signs && signs->n == n && signs->hw == hw,
          "magnitude backward needs signs from the forward pass");
  }

  std::vector<S> scratch(static_cast<std::size_t>(hw));
  for (std::int64_t p = 0; p < e.outer; ++p) {
    const S* g = gs.data() + p * n * hw;
    S* d = gc.data() + p * n * hw;

    if (cfg.mode == DabMode::Signed) {
      S* prefix = scratch.data();
      for (std::int64_t j = 0; j < hw; ++j) prefix[j] = S(0);
      for (int jf = 0; jf < n; ++jf) {
        const S* gj = g + jf * hw;
        S* dj = d + jf * hw;
        const S c = (jf == n - 1) ? S(1) : static_cast<S>(n - 1 - jf);
        for (std::int64_t j = 0; j < hw; ++j) {
          const S v = gj[j];
          dj[j] = c * v - prefix[j];
          prefix[j] += v;
        }
      }
      continue;
    }

    if (cfg.mode == DabMode::Magnitude) {
      const std::int64_t pair_base = p * (n * (n - 1) / 2);
      for (std::int64_t j = 0; j < hw; ++j) d[(n - 1) * hw + j] = g[(n - 1) * hw + j];
      for (int i = 0; i < n - 1; ++i) {
        const S* gi = g + i * hw;
        S* di = d + i * hw;
        for (int k = i + 1; k < n; ++k) {
          const std::int8_t* sp =
              signs->s.data() + (pair_base + detail::pair_index(i, k, n)) * hw;
          S* dk = d + k * hw;
          for (std::int64_t j = 0; j < hw; ++j) {
            const S sv = static_cast<S>(sp[j]);
            di[j] += sv * gi[j];
            dk[j] -= sv * gi[j];
          }
        }
      }
      continue;
    }

    // Windowed: slice jf receives w_jf * g_jf minus the g sum over the
    // slices whose window covers jf.
    const int m = cfg.window;
    for (int jf = 0; jf < n; ++jf) {
      const S* gj = g + jf * hw;
      S* dj = d + jf * hw;
      const S c = (jf == n - 1) ? S(1)
                                : static_cast<S>(std::min(jf + m, n - 1) - jf);
      for (std::int64_t j = 0; j < hw; ++j) dj[j] = c * gj[j];
      const int i_lo = std::max(0, jf - m);
      const int i_hi = std::min(jf - 1, n - 2);
      for (int i = i_lo; i <= i_hi; ++i) {
        const S* gi = g + i * hw;
        for (std::int64_t j = 0; j < hw; ++j) dj[j] -= gi[j];
      }
    }
  }
  return gc;
}

}  // namespace seqdab
