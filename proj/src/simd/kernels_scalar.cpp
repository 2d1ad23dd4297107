#include "mfh/simd/kernels.hpp"

namespace mfh::simd {
namespace {

void affine(const double* G, int rows, int cols, const double* in, const double* bias, double* out,
            long np, bool accumulate) {
  for (int r = 0; r < rows; ++r) {
    double* o = out + r * np;
    const double b = bias ? bias[r] : 0.0;
    if (accumulate) {
      for (long p = 0; p < np; ++p) o[p] += b;
    } else {
      for (long p = 0; p < np; ++p) o[p] = b;
    }
    for (int c = 0; c < cols; ++c) {
      const double g = G[r * cols + c];
      if (g == 0.0) continue;
      const double* x = in + c * np;
      for (long p = 0; p < np; ++p) o[p] += g * x[p];
    }
  }
}

void scale_add(const double* s, const double* in, double* out, int rows, long np) {
  for (int r = 0; r < rows; ++r) {
    const double* x = in + r * np;
    double* o = out + r * np;
    for (long p = 0; p < np; ++p) o[p] += s[p] * x[p];
  }
}

void accum_sumsq(const double* in, int rows, long np, double w, double* acc) {
  for (long p = 0; p < np; ++p) {
    double s = 0.0;
    for (int r = 0; r < rows; ++r) s += in[r * np + p] * in[r * np + p];
    acc[p] += w * s;
  }
}

void row_sums(const double* in, int rows, long np, double* sums) {
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* x = in + r * np;
    for (long p = 0; p < np; ++p) s += x[p];
    sums[r] = s;
  }
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k{affine, scale_add, accum_sumsq, row_sums};
  return k;
}

}  // namespace mfh::simd
