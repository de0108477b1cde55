#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "seqdab/errors.hpp"

// Single-precision GEMM tuned for this library's convolution shapes: tall
// column counts (an im2col matrix) against 16-64 output channels. Eigen's
// packed GEMM pays a packing cost that dominates at those row counts, so
// an AVX-512 build uses a register-tiled kernel instead; other builds fall
// back to Eigen. All matrices are dense row-major with an explicit leading
// dimension, letting callers pad buffers so row strides stay off the
// 4 KiB cache-alias grid (see padded_ld). Results depend only on the
// (fixed) blocking, so repeated runs are bit-identical.
//
// Three layouts cover every product the library forms:
//   gemm_nn: C (m x n) = A (m x k) * B (k x n)          forward
//   gemm_tn: C (m x n) = A^T * B with A stored (k x m)  input gradient
//   gemm_nt: C (m x n) = A * B^T with B stored (n x k)  weight gradient

namespace seqdab {

// Rounds a row length up so the stride in bytes is an odd multiple of 64,
// spreading consecutive rows across all L1 sets.
inline std::int64_t padded_ld(std::int64_t n) {
  std::int64_t ld = (n + 15) / 16 * 16;
  if ((ld / 16) % 2 == 0) ld += 16;
  return ld;
}

namespace gemm_detail {

#if defined(__AVX512F__)

// Panel sizes keeping a B panel (kc rows x nc columns) inside L2.
constexpr int kNC = 384;
constexpr int kKC = 512;
// K chunk of the dot kernel: 8 operand rows of this length stay in L1.
constexpr int kKDot = 512;

// MR x 32 tile: per k step, 2 B loads feed 2*MR FMAs via A broadcasts.
// A is addressed as A[i*ar + kk*ac] so the same kernel serves the plain
// and transposed-A layouts. Rows are named registers; if constexpr trims
// unused ones so smaller instantiations do not spill.
template <int MR>
inline void kern_b2(const float* A, std::int64_t ar, std::int64_t ac,
                    const float* B, std::int64_t ldb, float* C,
                    std::int64_t ldc, int k, bool accumulate) {
  static_assert(MR >= 1 && MR <= 8);
  const float* a0 = A;
  const float* a1 = MR > 1 ? A + ar : A;
  const float* a2 = MR > 2 ? A + 2 * ar : A;
  const float* a3 = MR > 3 ? A + 3 * ar : A;
  const float* a4 = MR > 4 ? A + 4 * ar : A;
  const float* a5 = MR > 5 ? A + 5 * ar : A;
  const float* a6 = MR > 6 ? A + 6 * ar : A;
  const float* a7 = MR > 7 ? A + 7 * ar : A;
  __m512 c00, c01, c10, c11, c20, c21, c30, c31;
  __m512 c40, c41, c50, c51, c60, c61, c70, c71;
  c00 = c01 = _mm512_setzero_ps();
  if constexpr (MR > 1) c10 = c11 = _mm512_setzero_ps();
  if constexpr (MR > 2) c20 = c21 = _mm512_setzero_ps();
  if constexpr (MR > 3) c30 = c31 = _mm512_setzero_ps();
  if constexpr (MR > 4) c40 = c41 = _mm512_setzero_ps();
  if constexpr (MR > 5) c50 = c51 = _mm512_setzero_ps();
  if constexpr (MR > 6) c60 = c61 = _mm512_setzero_ps();
  if constexpr (MR > 7) c70 = c71 = _mm512_setzero_ps();
  const float* bp = B;
  std::int64_t off = 0;
  for (int kk = 0; kk < k; ++kk, bp += ldb, off += ac) {
    const __m512 b0 = _mm512_loadu_ps(bp);
    const __m512 b1 = _mm512_loadu_ps(bp + 16);
    __m512 av;
    av = _mm512_set1_ps(a0[off]);
    c00 = _mm512_fmadd_ps(av, b0, c00);
    c01 = _mm512_fmadd_ps(av, b1, c01);
    if constexpr (MR > 1) {
      av = _mm512_set1_ps(a1[off]);
      c10 = _mm512_fmadd_ps(av, b0, c10);
      c11 = _mm512_fmadd_ps(av, b1, c11);
    }
    if constexpr (MR > 2) {
      av = _mm512_set1_ps(a2[off]);
      c20 = _mm512_fmadd_ps(av, b0, c20);
      c21 = _mm512_fmadd_ps(av, b1, c21);
    }
    if constexpr (MR > 3) {
      av = _mm512_set1_ps(a3[off]);
      c30 = _mm512_fmadd_ps(av, b0, c30);
      c31 = _mm512_fmadd_ps(av, b1, c31);
    }
    if constexpr (MR > 4) {
      av = _mm512_set1_ps(a4[off]);
      c40 = _mm512_fmadd_ps(av, b0, c40);
      c41 = _mm512_fmadd_ps(av, b1, c41);
    }
    if constexpr (MR > 5) {
      av = _mm512_set1_ps(a5[off]);
      c50 = _mm512_fmadd_ps(av, b0, c50);
      c51 = _mm512_fmadd_ps(av, b1, c51);
    }
    if constexpr (MR > 6) {
      av = _mm512_set1_ps(a6[off]);
      c60 = _mm512_fmadd_ps(av, b0, c60);
      c61 = _mm512_fmadd_ps(av, b1, c61);
    }
    if constexpr (MR > 7) {
      av = _mm512_set1_ps(a7[off]);
      c70 = _mm512_fmadd_ps(av, b0, c70);
      c71 = _mm512_fmadd_ps(av, b1, c71);
    }
  }
  const auto out = [&](int row, __m512 v0, __m512 v1) {
    float* cp = C + static_cast<std::int64_t>(row) * ldc;
    if (accumulate) {
      v0 = _mm512_add_ps(v0, _mm512_loadu_ps(cp));
      v1 = _mm512_add_ps(v1, _mm512_loadu_ps(cp + 16));
    }
    _mm512_storeu_ps(cp, v0);
    _mm512_storeu_ps(cp + 16, v1);
  };
  out(0, c00, c01);
  if constexpr (MR > 1) out(1, c10, c11);
  if constexpr (MR > 2) out(2, c20, c21);
  if constexpr (MR > 3) out(3, c30, c31);
  if constexpr (MR > 4) out(4, c40, c41);
  if constexpr (MR > 5) out(5, c50, c51);
  if constexpr (MR > 6) out(6, c60, c61);
  if constexpr (MR > 7) out(7, c70, c71);
}

// MR x (<=16) masked tail tile.
template <int MR>
inline void kern_b1(const float* A, std::int64_t ar, std::int64_t ac,
                    const float* B, std::int64_t ldb, float* C,
                    std::int64_t ldc, int k, __mmask16 mask, bool accumulate) {
  static_assert(MR >= 1 && MR <= 8);
  const float* a0 = A;
  const float* a1 = MR > 1 ? A + ar : A;
  const float* a2 = MR > 2 ? A + 2 * ar : A;
  const float* a3 = MR > 3 ? A + 3 * ar : A;
  const float* a4 = MR > 4 ? A + 4 * ar : A;
  const float* a5 = MR > 5 ? A + 5 * ar : A;
  const float* a6 = MR > 6 ? A + 6 * ar : A;
  const float* a7 = MR > 7 ? A + 7 * ar : A;
  __m512 c0, c1, c2, c3, c4, c5, c6, c7;
  c0 = _mm512_setzero_ps();
  if constexpr (MR > 1) c1 = _mm512_setzero_ps();
  if constexpr (MR > 2) c2 = _mm512_setzero_ps();
  if constexpr (MR > 3) c3 = _mm512_setzero_ps();
  if constexpr (MR > 4) c4 = _mm512_setzero_ps();
  if constexpr (MR > 5) c5 = _mm512_setzero_ps();
  if constexpr (MR > 6) c6 = _mm512_setzero_ps();
  if constexpr (MR > 7) c7 = _mm512_setzero_ps();
  const float* bp = B;
  std::int64_t off = 0;
  for (int kk = 0; kk < k; ++kk, bp += ldb, off += ac) {
    const __m512 bv = _mm512_maskz_loadu_ps(mask, bp);
    c0 = _mm512_fmadd_ps(_mm512_set1_ps(a0[off]), bv, c0);
    if constexpr (MR > 1) c1 = _mm512_fmadd_ps(_mm512_set1_ps(a1[off]), bv, c1);
    if constexpr (MR > 2) c2 = _mm512_fmadd_ps(_mm512_set1_ps(a2[off]), bv, c2);
    if constexpr (MR > 3) c3 = _mm512_fmadd_ps(_mm512_set1_ps(a3[off]), bv, c3);
    if constexpr (MR > 4) c4 = _mm512_fmadd_ps(_mm512_set1_ps(a4[off]), bv, c4);
    if constexpr (MR > 5) c5 = _mm512_fmadd_ps(_mm512_set1_ps(a5[off]), bv, c5);
    if constexpr (MR > 6) c6 = _mm512_fmadd_ps(_mm512_set1_ps(a6[off]), bv, c6);
    if constexpr (MR > 7) c7 = _mm512_fmadd_ps(_mm512_set1_ps(a7[off]), bv, c7);
  }
  const auto out = [&](int row, __m512 v) {
    float* cp = C + static_cast<std::int64_t>(row) * ldc;
    if (accumulate) v = _mm512_add_ps(v, _mm512_maskz_loadu_ps(mask, cp));
    _mm512_mask_storeu_ps(cp, mask, v);
  };
  out(0, c0);
  if constexpr (MR > 1) out(1, c1);
  if constexpr (MR > 2) out(2, c2);
  if constexpr (MR > 3) out(3, c3);
  if constexpr (MR > 4) out(4, c4);
  if constexpr (MR > 5) out(5, c5);
  if constexpr (MR > 6) out(6, c6);
  if constexpr (MR > 7) out(7, c7);
}

// One m x nb block of the strided-A product, k already chunked.
inline void block_panel(const float* A, std::int64_t ar, std::int64_t ac,
                        const float* B, std::int64_t ldb, float* C,
                        std::int64_t ldc, int m, int k, int nb,
                        bool accumulate) {
  const int pairs = nb / 32;
  const int rem = nb - pairs * 32;
  const __mmask16 mask =
      rem % 16 ? static_cast<__mmask16>((1u << (rem % 16)) - 1u) : 0;
  const auto run = [&](auto mr_tag, int i0) {
    constexpr int MR = decltype(mr_tag)::value;
    const float* a = A + static_cast<std::int64_t>(i0) * ar;
    float* c = C + static_cast<std::int64_t>(i0) * ldc;
    for (int p = 0; p < pairs; ++p)
      kern_b2<MR>(a, ar, ac, B + p * 32, ldb, c + p * 32, ldc, k, accumulate);
    int j = pairs * 32;
    if (rem >= 16) {
      kern_b1<MR>(a, ar, ac, B + j, ldb, c + j, ldc, k, __mmask16(0xffff),
                  accumulate);
      j += 16;
    }
    if (mask) kern_b1<MR>(a, ar, ac, B + j, ldb, c + j, ldc, k, mask, accumulate);
  };
  int i = 0;
  for (; i + 8 <= m; i += 8) run(std::integral_constant<int, 8>{}, i);
  switch (m - i) {
    case 7: run(std::integral_constant<int, 7>{}, i); break;
    case 6: run(std::integral_constant<int, 6>{}, i); break;
    case 5: run(std::integral_constant<int, 5>{}, i); break;
    case 4: run(std::integral_constant<int, 4>{}, i); break;
    case 3: run(std::integral_constant<int, 3>{}, i); break;
    case 2: run(std::integral_constant<int, 2>{}, i); break;
    case 1: run(std::integral_constant<int, 1>{}, i); break;
    default: break;
  }
}

// Strided-A driver: C (m x n) [+]= A * B with A addressed as
// A[i*ar + kk*ac]; covers both the plain and the transposed-A layout.
inline void gemm_strided_a(const float* A, std::int64_t ar, std::int64_t ac,
                           const float* B, std::int64_t ldb, float* C,
                           std::int64_t ldc, int m, int k, int n,
                           bool accumulate) {
  for (int j0 = 0; j0 < n; j0 += kNC) {
    const int nb = n - j0 < kNC ? n - j0 : kNC;
    for (int k0 = 0; k0 < k; k0 += kKC) {
      const int kb = k - k0 < kKC ? k - k0 : kKC;
      block_panel(A + static_cast<std::int64_t>(k0) * ac, ar, ac,
                  B + static_cast<std::int64_t>(k0) * ldb + j0, ldb, C + j0,
                  ldc, m, kb, nb, accumulate || k0 > 0);
    }
  }
}

// 4x4 dot-product tile for the B-transposed layout: both operands are read
// along contiguous k, one horizontal reduction per output cell. Named
// registers again; excess ones are trimmed by if constexpr.
template <int MR, int NR>
inline void kern_dot(const float* A, std::int64_t lda, const float* B,
                     std::int64_t ldb, float* C, std::int64_t ldc, int k,
                     bool accumulate) {
  static_assert(MR >= 1 && MR <= 4 && NR >= 1 && NR <= 4);
  const float* a0 = A;
  const float* a1 = MR > 1 ? A + lda : A;
  const float* a2 = MR > 2 ? A + 2 * lda : A;
  const float* a3 = MR > 3 ? A + 3 * lda : A;
  const float* b0 = B;
  const float* b1 = NR > 1 ? B + ldb : B;
  const float* b2 = NR > 2 ? B + 2 * ldb : B;
  const float* b3 = NR > 3 ? B + 3 * ldb : B;
  __m512 d00, d01, d02, d03, d10, d11, d12, d13;
  __m512 d20, d21, d22, d23, d30, d31, d32, d33;
  d00 = d01 = d02 = d03 = _mm512_setzero_ps();
  if constexpr (MR > 1) d10 = d11 = d12 = d13 = _mm512_setzero_ps();
  if constexpr (MR > 2) d20 = d21 = d22 = d23 = _mm512_setzero_ps();
  if constexpr (MR > 3) d30 = d31 = d32 = d33 = _mm512_setzero_ps();
  const auto step = [&](__m512 va, __m512 vb0, __m512 vb1, __m512 vb2,
                        __m512 vb3, __m512& e0, __m512& e1, __m512& e2,
                        __m512& e3) {
    e0 = _mm512_fmadd_ps(va, vb0, e0);
    if constexpr (NR > 1) e1 = _mm512_fmadd_ps(va, vb1, e1);
    if constexpr (NR > 2) e2 = _mm512_fmadd_ps(va, vb2, e2);
    if constexpr (NR > 3) e3 = _mm512_fmadd_ps(va, vb3, e3);
  };
  int kk = 0;
  for (; k - kk >= 16; kk += 16) {
    __m512 vb0, vb1, vb2, vb3;
    vb0 = _mm512_loadu_ps(b0 + kk);
    if constexpr (NR > 1) vb1 = _mm512_loadu_ps(b1 + kk);
    if constexpr (NR > 2) vb2 = _mm512_loadu_ps(b2 + kk);
    if constexpr (NR > 3) vb3 = _mm512_loadu_ps(b3 + kk);
    step(_mm512_loadu_ps(a0 + kk), vb0, vb1, vb2, vb3, d00, d01, d02, d03);
    if constexpr (MR > 1)
      step(_mm512_loadu_ps(a1 + kk), vb0, vb1, vb2, vb3, d10, d11, d12, d13);
    if constexpr (MR > 2)
      step(_mm512_loadu_ps(a2 + kk), vb0, vb1, vb2, vb3, d20, d21, d22, d23);
    if constexpr (MR > 3)
      step(_mm512_loadu_ps(a3 + kk), vb0, vb1, vb2, vb3, d30, d31, d32, d33);
  }
  if (kk < k) {
    const __mmask16 mask = static_cast<__mmask16>((1u << (k - kk)) - 1u);
    __m512 vb0, vb1, vb2, vb3;
    vb0 = _mm512_maskz_loadu_ps(mask, b0 + kk);
    if constexpr (NR > 1) vb1 = _mm512_maskz_loadu_ps(mask, b1 + kk);
    if constexpr (NR > 2) vb2 = _mm512_maskz_loadu_ps(mask, b2 + kk);
    if constexpr (NR > 3) vb3 = _mm512_maskz_loadu_ps(mask, b3 + kk);
    step(_mm512_maskz_loadu_ps(mask, a0 + kk), vb0, vb1, vb2, vb3, d00, d01,
         d02, d03);
    if constexpr (MR > 1)
      step(_mm512_maskz_loadu_ps(mask, a1 + kk), vb0, vb1, vb2, vb3, d10, d11,
           d12, d13);
    if constexpr (MR > 2)
      step(_mm512_maskz_loadu_ps(mask, a2 + kk), vb0, vb1, vb2, vb3, d20, d21,
           d22, d23);
    if constexpr (MR > 3)
      step(_mm512_maskz_loadu_ps(mask, a3 + kk), vb0, vb1, vb2, vb3, d30, d31,
           d32, d33);
  }
  const auto out = [&](int row, __m512 e0, __m512 e1, __m512 e2, __m512 e3) {
    float* cp = C + static_cast<std::int64_t>(row) * ldc;
    float v[4] = {0, 0, 0, 0};
    v[0] = _mm512_reduce_add_ps(e0);
    if constexpr (NR > 1) v[1] = _mm512_reduce_add_ps(e1);
    if constexpr (NR > 2) v[2] = _mm512_reduce_add_ps(e2);
    if constexpr (NR > 3) v[3] = _mm512_reduce_add_ps(e3);
    for (int j = 0; j < NR; ++j) cp[j] = accumulate ? cp[j] + v[j] : v[j];
  };
  out(0, d00, d01, d02, d03);
  if constexpr (MR > 1) out(1, d10, d11, d12, d13);
  if constexpr (MR > 2) out(2, d20, d21, d22, d23);
  if constexpr (MR > 3) out(3, d30, d31, d32, d33);
}

// C (m x n) [+]= A (m x k) * B^T with B stored (n x k). k is chunked so
// the eight operand rows of a tile stay L1-resident across the chunk.
inline void gemm_nt_impl(const float* A, std::int64_t lda, const float* B,
                         std::int64_t ldb, float* C, std::int64_t ldc, int m,
                         int k, int n, bool accumulate) {
  for (int k0 = 0; k0 < k; k0 += kKDot) {
    const int kb = k - k0 < kKDot ? k - k0 : kKDot;
    const bool acc = accumulate || k0 > 0;
    const auto tile = [&](auto mr_tag, auto nr_tag, int i0, int j0) {
      constexpr int TM = decltype(mr_tag)::value;
      constexpr int TN = decltype(nr_tag)::value;
      kern_dot<TM, TN>(A + static_cast<std::int64_t>(i0) * lda + k0, lda,
                       B + static_cast<std::int64_t>(j0) * ldb + k0, ldb,
                       C + static_cast<std::int64_t>(i0) * ldc + j0, ldc, kb,
                       acc);
    };
    const auto row_band = [&](auto mr_tag, int i0) {
      int j = 0;
      for (; j + 4 <= n; j += 4)
        tile(mr_tag, std::integral_constant<int, 4>{}, i0, j);
      switch (n - j) {
        case 3: tile(mr_tag, std::integral_constant<int, 3>{}, i0, j); break;
        case 2: tile(mr_tag, std::integral_constant<int, 2>{}, i0, j); break;
        case 1: tile(mr_tag, std::integral_constant<int, 1>{}, i0, j); break;
        default: break;
      }
    };
    int i = 0;
    for (; i + 4 <= m; i += 4) row_band(std::integral_constant<int, 4>{}, i);
    switch (m - i) {
      case 3: row_band(std::integral_constant<int, 3>{}, i); break;
      case 2: row_band(std::integral_constant<int, 2>{}, i); break;
      case 1: row_band(std::integral_constant<int, 1>{}, i); break;
      default: break;
    }
  }
}

#endif  // __AVX512F__

template <typename S>
using GemmMat =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using StrideMap =
    Eigen::Map<GemmMat<S>, Eigen::Unaligned,
               Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename S>
using ConstStrideMap =
    Eigen::Map<const GemmMat<S>, Eigen::Unaligned,
               Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

template <typename S>
void check_extents(int m, int k, int n) {
  check_shape(m >= 0 && k >= 0 && n >= 0, "gemm: negative extent");
}

}  // namespace gemm_detail

// C (m x n) = A (m x k) * B (k x n), optionally accumulating into C.
template <typename S>
void gemm_nn(const S* A, std::int64_t lda, const S* B, std::int64_t ldb, S* C,
             std::int64_t ldc, int m, int k, int n, bool accumulate = false) {
  using namespace gemm_detail;
  check_extents<S>(m, k, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      StrideMap<S>(C, m, n, {ldc, 1}).setZero();
    return;
  }
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<S, float>) {
    gemm_strided_a(A, lda, 1, B, ldb, C, ldc, m, k, n, accumulate);
    return;
  }
#endif
  ConstStrideMap<S> a(A, m, k, {lda, 1});
  ConstStrideMap<S> b(B, k, n, {ldb, 1});
  StrideMap<S> c(C, m, n, {ldc, 1});
  if (accumulate)
    c.noalias() += a * b;
  else
    c.noalias() = a * b;
}

// C (m x n) = A^T * B with A stored (k x m).
template <typename S>
void gemm_tn(const S* A, std::int64_t lda, const S* B, std::int64_t ldb, S* C,
             std::int64_t ldc, int m, int k, int n, bool accumulate = false) {
  using namespace gemm_detail;
  check_extents<S>(m, k, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      StrideMap<S>(C, m, n, {ldc, 1}).setZero();
    return;
  }
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<S, float>) {
    gemm_strided_a(A, 1, lda, B, ldb, C, ldc, m, k, n, accumulate);
    return;
  }
#endif
  ConstStrideMap<S> a(A, k, m, {lda, 1});
  ConstStrideMap<S> b(B, k, n, {ldb, 1});
  StrideMap<S> c(C, m, n, {ldc, 1});
  if (accumulate)
    c.noalias() += a.transpose() * b;
  else
    c.noalias() = a.transpose() * b;
}

// C (m x n) = A (m x k) * B^T with B stored (n x k).
template <typename S>
void gemm_nt(const S* A, std::int64_t lda, const S* B, std::int64_t ldb, S* C,
             std::int64_t ldc, int m, int k, int n, bool accumulate = false) {
  using namespace gemm_detail;
  check_extents<S>(m, k, n);
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      StrideMap<S>(C, m, n, {ldc, 1}).setZero();
    return;
  }
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<S, float>) {
    gemm_nt_impl(A, lda, B, ldb, C, ldc, m, k, n, accumulate);
    return;
  }
#endif
  ConstStrideMap<S> a(A, m, k, {lda, 1});
  ConstStrideMap<S> b(B, n, k, {ldb, 1});
  StrideMap<S> c(C, m, n, {ldc, 1});
  if (accumulate)
    c.noalias() += a * b.transpose();
  else
    c.noalias() = a * b.transpose();
}

}  // namespace seqdab
