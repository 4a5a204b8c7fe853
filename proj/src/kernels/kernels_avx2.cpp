// AVX2 + FMA float kernels. This file is compiled with -mavx2 -mfma and must
// only be entered through the dispatch table after a CPU feature check.

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "semivit/kernels.hpp"

namespace semivit::kernels::avx2 {
namespace {

// Lanes [0, count) enabled.
inline __m256i tail_mask(int count) {
  alignas(32) static const std::int32_t kTable[16] = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                      0,  0,  0,  0,  0,  0,  0,  0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kTable + 8 - count));
}

// exp(x) for float lanes, Cephes-style range reduction with a degree-5
// polynomial; relative error around 2 ulp on the clamped range.
inline __m256 exp_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);
  __m256 fx = _mm256_round_ps(_mm256_mul_ps(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);
  const __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, z, x);
  y = _mm256_add_ps(y, _mm256_set1_ps(1.0f));
  __m256i e = _mm256_cvttps_epi32(fx);
  e = _mm256_add_epi32(e, _mm256_set1_epi32(127));
  e = _mm256_slli_epi32(e, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(e));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

inline float hmax(__m256 v) {
  __m128 lo = _mm_max_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_movehdup_ps(lo));
  return _mm_cvtss_f32(lo);
}

inline void store_c(float* c, __m256 acc, float alpha, float beta) {
  const __m256 va = _mm256_set1_ps(alpha);
  if (beta == 0.0f) {
    _mm256_storeu_ps(c, _mm256_mul_ps(acc, va));
  } else {
    _mm256_storeu_ps(c, _mm256_fmadd_ps(acc, va, _mm256_mul_ps(_mm256_loadu_ps(c), _mm256_set1_ps(beta))));
  }
}

inline void store_c_masked(float* c, __m256 acc, float alpha, float beta, __m256i mask) {
  const __m256 va = _mm256_set1_ps(alpha);
  __m256 out = _mm256_mul_ps(acc, va);
  if (beta != 0.0f) {
    out = _mm256_fmadd_ps(_mm256_maskload_ps(c, mask), _mm256_set1_ps(beta), out);
  }
  _mm256_maskstore_ps(c, mask, out);
}

// C rows [0,R) x cols [0,16) from A (R x k, stride lda) and B (k x n, stride ldb).
template <int R>
inline void micro_16(int k, const float* a, int lda, const float* b, int ldb, float alpha,
                     float beta, float* c, int ldc) {
  __m256 acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) acc0[r] = acc1[r] = _mm256_setzero_ps();
  for (int p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + static_cast<std::size_t>(p) * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + static_cast<std::size_t>(p) * ldb + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + static_cast<std::size_t>(r) * lda + p);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    store_c(c + static_cast<std::size_t>(r) * ldc, acc0[r], alpha, beta);
    store_c(c + static_cast<std::size_t>(r) * ldc + 8, acc1[r], alpha, beta);
  }
}

// C rows [0,R) x cols [0,width) with width <= 8.
template <int R>
inline void micro_8(int width, int k, const float* a, int lda, const float* b, int ldb,
                    float alpha, float beta, float* c, int ldc) {
  const __m256i mask = tail_mask(width);
  __m256 acc[R];
  for (int r = 0; r < R; ++r) acc[r] = _mm256_setzero_ps();
  for (int p = 0; p < k; ++p) {
    const __m256 b0 = width == 8 ? _mm256_loadu_ps(b + static_cast<std::size_t>(p) * ldb)
                                 : _mm256_maskload_ps(b + static_cast<std::size_t>(p) * ldb, mask);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + static_cast<std::size_t>(r) * lda + p);
      acc[r] = _mm256_fmadd_ps(av, b0, acc[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    if (width == 8) {
      store_c(c + static_cast<std::size_t>(r) * ldc, acc[r], alpha, beta);
    } else {
      store_c_masked(c + static_cast<std::size_t>(r) * ldc, acc[r], alpha, beta, mask);
    }
  }
}

template <int R>
void row_block(int n, int k, const float* a, int lda, const float* b, int ldb, float alpha,
               float beta, float* c, int ldc) {
  int j = 0;
  for (; j + 16 <= n; j += 16) micro_16<R>(k, a, lda, b + j, ldb, alpha, beta, c + j, ldc);
  for (; j < n; j += 8) {
    micro_8<R>(std::min(8, n - j), k, a, lda, b + j, ldb, alpha, beta, c + j, ldc);
  }
}

void transpose_into(const float* src, int rows, int cols, int ld, std::vector<float>& dst) {
  // src is rows x cols with stride ld; dst becomes cols x rows contiguous.
  dst.resize(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const float* s = src + static_cast<std::size_t>(r) * ld;
    for (int cidx = 0; cidx < cols; ++cidx) dst[static_cast<std::size_t>(cidx) * rows + r] = s[cidx];
  }
}

// C = alpha * A B + beta * C with A m x k and B k x n, both row-major.
void gemm_nn(int m, int n, int k, float alpha, const float* a, int lda, const float* b, int ldb,
             float beta, float* c, int ldc) {
  int i = 0;
  for (; i + 6 <= m; i += 6) {
    row_block<6>(n, k, a + static_cast<std::size_t>(i) * lda, lda, b, ldb, alpha, beta,
                 c + static_cast<std::size_t>(i) * ldc, ldc);
  }
  const float* ar = a + static_cast<std::size_t>(i) * lda;
  float* cr = c + static_cast<std::size_t>(i) * ldc;
  switch (m - i) {
    case 5: row_block<5>(n, k, ar, lda, b, ldb, alpha, beta, cr, ldc); break;
    case 4: row_block<4>(n, k, ar, lda, b, ldb, alpha, beta, cr, ldc); break;
    case 3: row_block<3>(n, k, ar, lda, b, ldb, alpha, beta, cr, ldc); break;
    case 2: row_block<2>(n, k, ar, lda, b, ldb, alpha, beta, cr, ldc); break;
    case 1: row_block<1>(n, k, ar, lda, b, ldb, alpha, beta, cr, ldc); break;
    default: break;
  }
}

}  // namespace

void gemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  if (m <= 0 || n <= 0) return;
  thread_local std::vector<float> apack, bpack;
  if (ta == Trans::kYes) {
    // stored as k x m
    transpose_into(a, k, m, lda, apack);
    a = apack.data();
    lda = k;
  }
  if (tb == Trans::kYes) {
    // stored as n x k
    transpose_into(b, n, k, ldb, bpack);
    b = bpack.data();
    ldb = n;
  }
  // Long reductions run in slices so each B panel stays in cache; later
  // slices accumulate into C.
  constexpr int kSlice = 256;
  if (k <= kSlice) {
    gemm_nn(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    return;
  }
  for (int p = 0; p < k; p += kSlice) {
    gemm_nn(m, n, std::min(kSlice, k - p), alpha, a + p, lda, b + static_cast<std::size_t>(p) * ldb,
            ldb, p == 0 ? beta : 1.0f, c, ldc);
  }
}

void axpby(std::size_t n, float alpha, const float* x, float beta, float* y) {
  const __m256 va = _mm256_set1_ps(alpha), vb = _mm256_set1_ps(beta);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 ax = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(vb, _mm256_loadu_ps(y + i), ax));
  }
  for (; i < n; ++i) y[i] = std::fma(beta, y[i], alpha * x[i]);
}

void blend(std::size_t n, float alpha, const float* x, float beta, const float* y, float* out) {
  const __m256 va = _mm256_set1_ps(alpha), vb = _mm256_set1_ps(beta);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 ax = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(vb, _mm256_loadu_ps(y + i), ax));
  }
  for (; i < n; ++i) out[i] = std::fma(beta, y[i], alpha * x[i]);
}

void softmax_rows(int rows, int cols, float* data, int ld) {
  for (int r = 0; r < rows; ++r) {
    float* x = data + static_cast<std::size_t>(r) * ld;
    int j = 0;
    __m256 vmax = _mm256_set1_ps(-INFINITY);
    for (; j + 8 <= cols; j += 8) vmax = _mm256_max_ps(vmax, _mm256_loadu_ps(x + j));
    float mx = hmax(vmax);
    for (; j < cols; ++j) mx = std::max(mx, x[j]);

    const __m256 vm = _mm256_set1_ps(mx);
    __m256 vsum = _mm256_setzero_ps();
    j = 0;
    for (; j + 8 <= cols; j += 8) {
      const __m256 e = exp_ps(_mm256_sub_ps(_mm256_loadu_ps(x + j), vm));
      _mm256_storeu_ps(x + j, e);
      vsum = _mm256_add_ps(vsum, e);
    }
    if (j < cols) {
      const __m256i mask = tail_mask(cols - j);
      const __m256 in = _mm256_maskload_ps(x + j, mask);
      const __m256 e = _mm256_and_ps(exp_ps(_mm256_sub_ps(in, vm)), _mm256_castsi256_ps(mask));
      _mm256_maskstore_ps(x + j, mask, e);
      vsum = _mm256_add_ps(vsum, e);
    }
    const __m256 inv = _mm256_set1_ps(1.0f / hsum(vsum));
    j = 0;
    for (; j + 8 <= cols; j += 8) _mm256_storeu_ps(x + j, _mm256_mul_ps(_mm256_loadu_ps(x + j), inv));
    if (j < cols) {
      const __m256i mask = tail_mask(cols - j);
      _mm256_maskstore_ps(x + j, mask, _mm256_mul_ps(_mm256_maskload_ps(x + j, mask), inv));
    }
  }
}

void adamw_update(std::size_t n, float* param, const float* grad, float* m, float* v,
                  const AdamWCoeffs& c) {
  const float b1 = static_cast<float>(c.beta1), b2 = static_cast<float>(c.beta2);
  const float step = static_cast<float>(c.lr / c.bias_correction1);
  const float inv_bc2_sqrt = static_cast<float>(1.0 / std::sqrt(c.bias_correction2));
  const float eps = static_cast<float>(c.eps);
  const float decay = static_cast<float>(1.0 - c.lr * c.weight_decay);
  const __m256 vb1 = _mm256_set1_ps(b1), vb2 = _mm256_set1_ps(b2);
  const __m256 v1b1 = _mm256_set1_ps(1.0f - b1), v1b2 = _mm256_set1_ps(1.0f - b2);
  const __m256 vstep = _mm256_set1_ps(step), vinv = _mm256_set1_ps(inv_bc2_sqrt);
  const __m256 veps = _mm256_set1_ps(eps), vdecay = _mm256_set1_ps(decay);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    const __m256 mi = _mm256_fmadd_ps(vb1, _mm256_loadu_ps(m + i), _mm256_mul_ps(v1b1, g));
    const __m256 vi =
        _mm256_fmadd_ps(vb2, _mm256_loadu_ps(v + i), _mm256_mul_ps(v1b2, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 denom = _mm256_fmadd_ps(_mm256_sqrt_ps(vi), vinv, veps);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(vstep, mi), denom);
    _mm256_storeu_ps(param + i, _mm256_fmsub_ps(_mm256_loadu_ps(param + i), vdecay, upd));
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0f - b2) * grad[i] * grad[i];
    const float denom = std::sqrt(v[i]) * inv_bc2_sqrt + eps;
    param[i] = param[i] * decay - step * m[i] / denom;
  }
}

}  // namespace semivit::kernels::avx2
