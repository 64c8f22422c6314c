#pragma once

#include <cstddef>
#include <span>

namespace lindlab::kernels {

// Reduction kernels used for every accumulation over atom arrays (weighted
// means, variances, Lindeberg tail masses). Two backends: a scalar reference
// and an AVX2 variant selected at runtime. Both execute the same IEEE
// operations on the same operands in the same order, so their results are
// bit-identical, not merely close:
//   - the main loop keeps four lane accumulators, lane j taking elements with
//     index congruent to j mod 4;
//   - lanes combine as (l0 + l2) + (l1 + l3);
//   - the tail (n mod 4 elements) is added sequentially afterwards.
// The translation unit is compiled with -ffp-contract=off so the scalar path
// cannot be contracted into FMA.
enum class Backend { scalar, avx2 };

// Backend chosen by cpuid at first use.
Backend active_backend();

// Testing hook. Requesting avx2 on hardware without it falls back to scalar.
void force_backend(Backend backend);
void clear_forced_backend();

double sum(std::span<const double> x);

double dot(std::span<const double> x, std::span<const double> y);

// sum_i w[i] * (x[i] - c)^2
double moment2(std::span<const double> x, std::span<const double> w, double c);

// sum_i w[i] * (x[i] - c)^2 over indices with |x[i] - c| > tau (strict).
double moment2_tail(std::span<const double> x, std::span<const double> w,
                    double c, double tau);

}  // namespace lindlab::kernels
