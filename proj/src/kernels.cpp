#include "lindlab/kernels.hpp"

#include <cassert>
#include <cmath>
#include <cstddef>
#include <optional>

#if defined(__x86_64__) || defined(_M_X64)
#define LINDLAB_X86 1
#include <immintrin.h>
#else
#define LINDLAB_X86 0
#endif

namespace lindlab::kernels {
namespace {

std::optional<Backend> g_forced;

bool avx2_available() {
#if LINDLAB_X86 && defined(__GNUC__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

// ---------------------------------------------------------------- scalar --

double sum_scalar(std::span<const double> x) {
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  for (std::size_t i = 0; i < main; i += 4) {
    l0 += x[i];
    l1 += x[i + 1];
    l2 += x[i + 2];
    l3 += x[i + 3];
  }
  double s = (l0 + l2) + (l1 + l3);
  for (std::size_t i = main; i < n; ++i) s += x[i];
  return s;
}

double dot_scalar(std::span<const double> x, std::span<const double> y) {
  assert(x.size() == y.size());
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  for (std::size_t i = 0; i < main; i += 4) {
    l0 += x[i] * y[i];
    l1 += x[i + 1] * y[i + 1];
    l2 += x[i + 2] * y[i + 2];
    l3 += x[i + 3] * y[i + 3];
  }
  double s = (l0 + l2) + (l1 + l3);
  for (std::size_t i = main; i < n; ++i) s += x[i] * y[i];
  return s;
}

double moment2_scalar(std::span<const double> x, std::span<const double> w,
                      double c) {
  assert(x.size() == w.size());
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  for (std::size_t i = 0; i < main; i += 4) {
    const double d0 = x[i] - c, d1 = x[i + 1] - c;
    const double d2 = x[i + 2] - c, d3 = x[i + 3] - c;
    l0 += w[i] * (d0 * d0);
    l1 += w[i + 1] * (d1 * d1);
    l2 += w[i + 2] * (d2 * d2);
    l3 += w[i + 3] * (d3 * d3);
  }
  double s = (l0 + l2) + (l1 + l3);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - c;
    s += w[i] * (d * d);
  }
  return s;
}

double moment2_tail_scalar(std::span<const double> x, std::span<const double> w,
                           double c, double tau) {
  assert(x.size() == w.size());
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  // The excluded branch adds +0.0 so the lane update matches the vector
  // blend exactly (lanes never hold -0.0: weights are nonnegative).
  for (std::size_t i = 0; i < main; i += 4) {
    const double d0 = x[i] - c, d1 = x[i + 1] - c;
    const double d2 = x[i + 2] - c, d3 = x[i + 3] - c;
    l0 += std::fabs(d0) > tau ? w[i] * (d0 * d0) : 0.0;
    l1 += std::fabs(d1) > tau ? w[i + 1] * (d1 * d1) : 0.0;
    l2 += std::fabs(d2) > tau ? w[i + 2] * (d2 * d2) : 0.0;
    l3 += std::fabs(d3) > tau ? w[i + 3] * (d3 * d3) : 0.0;
  }
  double s = (l0 + l2) + (l1 + l3);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - c;
    s += std::fabs(d) > tau ? w[i] * (d * d) : 0.0;
  }
  return s;
}

// ------------------------------------------------------------------ avx2 --

#if LINDLAB_X86

// Combine [l0,l1,l2,l3] as (l0+l2) + (l1+l3), the scalar lane tree.
__attribute__((target("avx2"))) inline double lane_combine(__m256d acc) {
  const __m128d lo = _mm256_castpd256_pd128(acc);   // [l0, l1]
  const __m128d hi = _mm256_extractf128_pd(acc, 1); // [l2, l3]
  const __m128d pair = _mm_add_pd(lo, hi);          // [l0+l2, l1+l3]
  return _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
}

__attribute__((target("avx2"))) double sum_avx2(std::span<const double> x) {
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t i = 0; i < main; i += 4)
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x.data() + i));
  double s = lane_combine(acc);
  for (std::size_t i = main; i < n; ++i) s += x[i];
  return s;
}

__attribute__((target("avx2"))) double dot_avx2(std::span<const double> x,
                                                std::span<const double> y) {
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t i = 0; i < main; i += 4) {
    const __m256d p = _mm256_mul_pd(_mm256_loadu_pd(x.data() + i),
                                    _mm256_loadu_pd(y.data() + i));
    acc = _mm256_add_pd(acc, p);
  }
  double s = lane_combine(acc);
  for (std::size_t i = main; i < n; ++i) s += x[i] * y[i];
  return s;
}

__attribute__((target("avx2"))) double moment2_avx2(std::span<const double> x,
                                                    std::span<const double> w,
                                                    double c) {
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  const __m256d cc = _mm256_set1_pd(c);
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t i = 0; i < main; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), cc);
    const __m256d t =
        _mm256_mul_pd(_mm256_loadu_pd(w.data() + i), _mm256_mul_pd(d, d));
    acc = _mm256_add_pd(acc, t);
  }
  double s = lane_combine(acc);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - c;
    s += w[i] * (d * d);
  }
  return s;
}

__attribute__((target("avx2"))) double moment2_tail_avx2(
    std::span<const double> x, std::span<const double> w, double c,
    double tau) {
  const std::size_t n = x.size();
  const std::size_t main = n - n % 4;
  const __m256d cc = _mm256_set1_pd(c);
  const __m256d tt = _mm256_set1_pd(tau);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t i = 0; i < main; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x.data() + i), cc);
    const __m256d ad = _mm256_andnot_pd(sign_mask, d);
    const __m256d keep = _mm256_cmp_pd(ad, tt, _CMP_GT_OQ);
    const __m256d t =
        _mm256_mul_pd(_mm256_loadu_pd(w.data() + i), _mm256_mul_pd(d, d));
    acc = _mm256_add_pd(acc, _mm256_and_pd(keep, t));
  }
  double s = lane_combine(acc);
  for (std::size_t i = main; i < n; ++i) {
    const double d = x[i] - c;
    s += std::fabs(d) > tau ? w[i] * (d * d) : 0.0;
  }
  return s;
}

#endif  // LINDLAB_X86

bool use_avx2() {
  if (g_forced) return *g_forced == Backend::avx2 && avx2_available();
  return avx2_available();
}

}  // namespace

Backend active_backend() {
  return use_avx2() ? Backend::avx2 : Backend::scalar;
}

void force_backend(Backend backend) { g_forced = backend; }
void clear_forced_backend() { g_forced.reset(); }

double sum(std::span<const double> x) {
#if LINDLAB_X86
  if (use_avx2()) return sum_avx2(x);
#endif
  return sum_scalar(x);
}

double dot(std::span<const double> x, std::span<const double> y) {
#if LINDLAB_X86
  if (use_avx2()) return dot_avx2(x, y);
#endif
  return dot_scalar(x, y);
}

double moment2(std::span<const double> x, std::span<const double> w,
               double c) {
#if LINDLAB_X86
  if (use_avx2()) return moment2_avx2(x, w, c);
#endif
  return moment2_scalar(x, w, c);
}

double moment2_tail(std::span<const double> x, std::span<const double> w,
                    double c, double tau) {
#if LINDLAB_X86
  if (use_avx2()) return moment2_tail_avx2(x, w, c, tau);
#endif
  return moment2_tail_scalar(x, w, c, tau);
}

}  // namespace lindlab::kernels
