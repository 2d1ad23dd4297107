#pragma once

// Structure-of-arrays kernels for the particle simulator. A block of `rows`
// quantities over `np` particles is stored row by row: element (r, p) lives
// at data[r * np + p]. Matrices passed as `G` are dense row-major.

namespace mfh::simd {

enum class Backend { scalar, avx2 };

struct Kernels {
  // out(r,p) = [accumulate ? out(r,p) : 0] + sum_c G(r,c) in(c,p) + bias(r)
  void (*affine)(const double* G, int rows, int cols, const double* in, const double* bias,
                 double* out, long np, bool accumulate);
  // out(r,p) += s(p) in(r,p)
  void (*scale_add)(const double* s, const double* in, double* out, int rows, long np);
  // acc(p) += w sum_r in(r,p)^2
  void (*accum_sumsq)(const double* in, int rows, long np, double w, double* acc);
  // sums(r) = sum_p in(r,p)
  void (*row_sums)(const double* in, int rows, long np, double* sums);
};

const Kernels& scalar_kernels();
/// Null when the binary was built without AVX2 support.
const Kernels* avx2_kernels();

bool avx2_available();
Backend active_backend();
/// Overrides the runtime choice; throws InvalidArgument if avx2 is requested
/// on a CPU without AVX2/FMA.
void set_backend(Backend b);
const Kernels& kernels();

}  // namespace mfh::simd
