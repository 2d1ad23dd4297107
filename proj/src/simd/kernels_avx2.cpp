#include <immintrin.h>

#include "mfh/simd/kernels.hpp"

namespace mfh::simd {
namespace {

void affine(const double* G, int rows, int cols, const double* in, const double* bias, double* out,
            long np, bool accumulate) {
  const long nv = np & ~3L;
  for (int r = 0; r < rows; ++r) {
    double* o = out + r * np;
    const double b = bias ? bias[r] : 0.0;
    const __m256d vb = _mm256_set1_pd(b);
    for (long p = 0; p < nv; p += 4) {
      __m256d acc = accumulate ? _mm256_add_pd(_mm256_loadu_pd(o + p), vb) : vb;
      for (int c = 0; c < cols; ++c) {
        const double g = G[r * cols + c];
        if (g == 0.0) continue;
        acc = _mm256_fmadd_pd(_mm256_set1_pd(g), _mm256_loadu_pd(in + c * np + p), acc);
      }
      _mm256_storeu_pd(o + p, acc);
    }
    for (long p = nv; p < np; ++p) {
      double acc = accumulate ? o[p] + b : b;
      for (int c = 0; c < cols; ++c) {
        const double g = G[r * cols + c];
        if (g != 0.0) acc += g * in[c * np + p];
      }
      o[p] = acc;
    }
  }
}

void scale_add(const double* s, const double* in, double* out, int rows, long np) {
  const long nv = np & ~3L;
  for (int r = 0; r < rows; ++r) {
    const double* x = in + r * np;
    double* o = out + r * np;
    for (long p = 0; p < nv; p += 4)
      _mm256_storeu_pd(o + p, _mm256_fmadd_pd(_mm256_loadu_pd(s + p), _mm256_loadu_pd(x + p),
                                              _mm256_loadu_pd(o + p)));
    for (long p = nv; p < np; ++p) o[p] += s[p] * x[p];
  }
}

void accum_sumsq(const double* in, int rows, long np, double w, double* acc) {
  const long nv = np & ~3L;
  const __m256d vw = _mm256_set1_pd(w);
  for (long p = 0; p < nv; p += 4) {
    __m256d s = _mm256_setzero_pd();
    for (int r = 0; r < rows; ++r) {
      const __m256d x = _mm256_loadu_pd(in + r * np + p);
      s = _mm256_fmadd_pd(x, x, s);
    }
    _mm256_storeu_pd(acc + p, _mm256_fmadd_pd(vw, s, _mm256_loadu_pd(acc + p)));
  }
  for (long p = nv; p < np; ++p) {
    double s = 0.0;
    for (int r = 0; r < rows; ++r) s += in[r * np + p] * in[r * np + p];
    acc[p] += w * s;
  }
}

void row_sums(const double* in, int rows, long np, double* sums) {
  const long nv = np & ~3L;
  for (int r = 0; r < rows; ++r) {
    const double* x = in + r * np;
    __m256d a = _mm256_setzero_pd();
    for (long p = 0; p < nv; p += 4) a = _mm256_add_pd(a, _mm256_loadu_pd(x + p));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, a);
    double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (long p = nv; p < np; ++p) s += x[p];
    sums[r] = s;
  }
}

}  // namespace

const Kernels* avx2_kernels() {
  static const Kernels k{affine, scale_add, accum_sumsq, row_sums};
  return &k;
}

}  // namespace mfh::simd
