#pragma once

#include <cstddef>

// Hot numeric kernels compiled with -ffast-math in their own translation
// unit (see fastmath.cpp): reassociation keeps reductions SIMD-wide without
// loosening IEEE semantics anywhere else.
namespace sleepyco {

void exp_inplace(double* p, std::size_t n);
double fm_dot(const double* a, const double* b, std::size_t n);
double fm_sum(const double* a, std::size_t n);
double fm_max(const double* a, std::size_t n);
// s[j] += c * a[j]
void fm_axpy(double c, const double* a, double* s, std::size_t n);
// out[0..d) += sum_j p[j] * rows[j*d .. j*d+d)
void fm_weighted_rows(const double* p, const double* rows, std::size_t n,
                      std::size_t d, double* out);

}  // namespace sleepyco
