// Copyright 2026 The reverb-fl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after runtime CPU detection (see dispatch.cpp).

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "kernels_impl.hpp"

namespace reverb::kernels::avx2 {

namespace {

// 4 x 8 tile of C, k-loop over rows of B. `arow(r, p)` addresses A.
template <class AAt>
inline void tile_4x8(std::size_t k, AAt arow, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                     bool accumulate) {
  __m256d acc[4][2];
  for (int r = 0; r < 4; ++r) {
    if (accumulate) {
      acc[r][0] = _mm256_loadu_pd(c + r * ldc);
      acc[r][1] = _mm256_loadu_pd(c + r * ldc + 4);
    } else {
      acc[r][0] = _mm256_setzero_pd();
      acc[r][1] = _mm256_setzero_pd();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < 4; ++r) {
      const __m256d av = _mm256_broadcast_sd(arow(r, p));
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

template <class AAt>
inline void tile_4x4(std::size_t k, AAt arow, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                     bool accumulate) {
  __m256d acc[4];
  for (int r = 0; r < 4; ++r) acc[r] = accumulate ? _mm256_loadu_pd(c + r * ldc) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    for (int r = 0; r < 4; ++r) acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(arow(r, p)), b0, acc[r]);
  }
  for (int r = 0; r < 4; ++r) _mm256_storeu_pd(c + r * ldc, acc[r]);
}

// Trailing 1..3 columns through masked loads and stores.
inline __m256i tail_mask(std::size_t cols) {
  return _mm256_setr_epi64x(cols > 0 ? -1 : 0, cols > 1 ? -1 : 0, cols > 2 ? -1 : 0, 0);
}

template <class AAt>
inline void tile_4xm(std::size_t k, AAt arow, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                     bool accumulate, __m256i mask) {
  __m256d acc[4];
  for (int r = 0; r < 4; ++r) acc[r] = accumulate ? _mm256_maskload_pd(c + r * ldc, mask) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_maskload_pd(b + p * ldb, mask);
    for (int r = 0; r < 4; ++r) acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(arow(r, p)), b0, acc[r]);
  }
  for (int r = 0; r < 4; ++r) _mm256_maskstore_pd(c + r * ldc, mask, acc[r]);
}

template <class AAt>
inline void tile_1x8(std::size_t k, AAt arow, const double* b, std::size_t ldb, double* c, bool accumulate) {
  __m256d acc0 = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  __m256d acc1 = accumulate ? _mm256_loadu_pd(c + 4) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(arow(0, p));
    acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb), acc0);
    acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + 4), acc1);
  }
  _mm256_storeu_pd(c, acc0);
  _mm256_storeu_pd(c + 4, acc1);
}

template <class AAt>
inline void tile_1x4(std::size_t k, AAt arow, const double* b, std::size_t ldb, double* c, bool accumulate) {
  __m256d acc = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    acc = _mm256_fmadd_pd(_mm256_broadcast_sd(arow(0, p)), _mm256_loadu_pd(b + p * ldb), acc);
  }
  _mm256_storeu_pd(c, acc);
}

template <class AAt>
inline void tile_1x1(std::size_t k, AAt arow, const double* b, std::size_t ldb, double* c, bool accumulate) {
  double acc = accumulate ? *c : 0.0;
  for (std::size_t p = 0; p < k; ++p) acc = std::fma(*arow(0, p), b[p * ldb], acc);
  *c = acc;
}

// Shared driver: C[m,n] (+)= sum_p A(i,p) * B[p,j], A accessed through a
// functor built from (row offset) so the same tiling serves NN and TN.
template <class MakeA>
void gemm_driver(std::size_t m, std::size_t n, std::size_t k, MakeA make_a, const double* b, std::size_t ldb,
                 double* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    auto at = make_a(i);
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) tile_4x8(k, at, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    for (; j + 4 <= n; j += 4) tile_4x4(k, at, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (j < n) tile_4xm(k, at, b + j, ldb, c + i * ldc + j, ldc, accumulate, tail_mask(n - j));
  }
  for (; i < m; ++i) {
    auto at = make_a(i);
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) tile_1x8(k, at, b + j, ldb, c + i * ldc + j, accumulate);
    for (; j + 4 <= n; j += 4) tile_1x4(k, at, b + j, ldb, c + i * ldc + j, accumulate);
    for (; j < n; ++j) tile_1x1(k, at, b + j, ldb, c + i * ldc + j, accumulate);
  }
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

constexpr std::size_t kTnBlock = 256;

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  auto make_a = [&](std::size_t i) {
    const double* base = a + i * lda;
    return [base, lda](int r, std::size_t p) { return base + r * lda + p; };
  };
  gemm_driver(m, n, k, make_a, b, ldb, c, ldc, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  // Blocked over k so that the A and B panels stay cache resident while every
  // tile of C sweeps them.
  for (std::size_t p0 = 0; p0 < k || (p0 == 0 && k == 0); p0 += kTnBlock) {
    const std::size_t kb = std::min(kTnBlock, k - p0);
    const double* ab = a + p0 * lda;
    auto make_a = [&](std::size_t i) {
      return [ab, lda, i](int r, std::size_t p) { return ab + p * lda + i + r; };
    };
    gemm_driver(m, n, kb, make_a, b + p0 * ldb, ldb, c, ldc, accumulate || p0 > 0);
    if (k == 0) break;
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void relu(std::size_t n, const double* x, double* y) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(y + i, _mm256_and_pd(v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* dy, double* dx) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dx + i, _mm256_and_pd(_mm256_loadu_pd(dy + i), mask));
  }
  for (; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void signed_step_project(std::size_t n, const double* cur, const double* origin, const double* grad, double step,
                         double radius, double bound, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d vstep = _mm256_set1_pd(step);
  const __m256d vneg = _mm256_set1_pd(-step);
  const __m256d vrad = _mm256_set1_pd(radius);
  const __m256d vhi = _mm256_set1_pd(bound);
  const __m256d vlo = _mm256_set1_pd(-bound);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d pos = _mm256_and_pd(_mm256_cmp_pd(g, zero, _CMP_GT_OQ), vstep);
    const __m256d neg = _mm256_and_pd(_mm256_cmp_pd(g, zero, _CMP_LT_OQ), vneg);
    const __m256d s = _mm256_or_pd(pos, neg);
    const __m256d o = _mm256_loadu_pd(origin + i);
    __m256d v = _mm256_add_pd(_mm256_loadu_pd(cur + i), s);
    v = _mm256_min_pd(_mm256_max_pd(v, _mm256_sub_pd(o, vrad)), _mm256_add_pd(o, vrad));
    v = _mm256_min_pd(_mm256_max_pd(v, vlo), vhi);
    _mm256_storeu_pd(out + i, v);
  }
  for (; i < n; ++i) {
    const double s = grad[i] > 0.0 ? step : (grad[i] < 0.0 ? -step : 0.0);
    double v = cur[i] + s;
    v = std::min(std::max(v, origin[i] - radius), origin[i] + radius);
    out[i] = std::min(std::max(v, -bound), bound);
  }
}

void adam_update(std::size_t n, const double* g, double* m, double* v, double* p, double beta1, double beta2,
                 double lr_hat, double eps_hat) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d c1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d c2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d lr = _mm256_set1_pd(lr_hat);
  const __m256d eps = _mm256_set1_pd(eps_hat);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    const __m256d mv = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(c1, gv));
    const __m256d vv =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(c2, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(lr, mv), _mm256_add_pd(_mm256_sqrt_pd(vv), eps));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    p[i] -= lr_hat * m[i] / (std::sqrt(v[i]) + eps_hat);
  }
}

}  // namespace reverb::kernels::avx2
