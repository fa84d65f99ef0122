// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

// Array erf/exp. Uses glibc's SIMD math library when the build enables it
// (ICLLAB_HAVE_MVEC), otherwise the scalar <cmath> functions.

#pragma once

#include <cmath>
#include <cstddef>

#if defined(ICLLAB_HAVE_MVEC) && (defined(__AVX512F__) || defined(__AVX2__))
#include <immintrin.h>
#define ICLLAB_VECMATH 1
extern "C" {
#if defined(__AVX512F__)
__m512d _ZGVeN8v_erf(__m512d);
__m512d _ZGVeN8v_exp(__m512d);
#else
__m256d _ZGVdN4v_erf(__m256d);
__m256d _ZGVdN4v_exp(__m256d);
#endif
}
#endif

namespace icllab::ndiff::detail {

#if defined(ICLLAB_VECMATH) && defined(__AVX512F__)
constexpr std::size_t kLanes = 8;
inline void erf_block(const double* in, double* out) { _mm512_storeu_pd(out, _ZGVeN8v_erf(_mm512_loadu_pd(in))); }
inline void exp_block(const double* in, double* out) { _mm512_storeu_pd(out, _ZGVeN8v_exp(_mm512_loadu_pd(in))); }
#elif defined(ICLLAB_VECMATH)
constexpr std::size_t kLanes = 4;
inline void erf_block(const double* in, double* out) { _mm256_storeu_pd(out, _ZGVdN4v_erf(_mm256_loadu_pd(in))); }
inline void exp_block(const double* in, double* out) { _mm256_storeu_pd(out, _ZGVdN4v_exp(_mm256_loadu_pd(in))); }
#else
constexpr std::size_t kLanes = 1;
inline void erf_block(const double* in, double* out) { *out = std::erf(*in); }
inline void exp_block(const double* in, double* out) { *out = std::exp(*in); }
#endif

// out may alias in.
inline void erf_array(const double* in, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) erf_block(in + i, out + i);
  for (; i < n; ++i) out[i] = std::erf(in[i]);
}

inline void exp_array(const double* in, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) exp_block(in + i, out + i);
  for (; i < n; ++i) out[i] = std::exp(in[i]);
}

}  // namespace icllab::ndiff::detail
