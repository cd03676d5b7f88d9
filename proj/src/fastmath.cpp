#include "fastmath.hpp"

#include <algorithm>
#include <cmath>

namespace sleepyco {

void exp_inplace(double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = std::exp(p[i]);
}

double fm_dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double fm_sum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double fm_max(const double* a, std::size_t n) {
    double m = a[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
    return m;
}

void fm_axpy(double c, const double* a, double* s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) s[i] += c * a[i];
}

void fm_weighted_rows(const double* p, const double* rows, std::size_t n,
                      std::size_t d, double* out) {
    if (d == 8) {  // the per-head width used throughout; stays in registers
        double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        for (std::size_t j = 0; j < n; ++j) {
            const double pj = p[j];
            const double* r = rows + 8 * j;
            for (int k = 0; k < 8; ++k) acc[k] += pj * r[k];
        }
        for (int k = 0; k < 8; ++k) out[k] += acc[k];
        return;
    }
    for (std::size_t j = 0; j < n; ++j) {
        const double pj = p[j];
        const double* r = rows + d * j;
        for (std::size_t k = 0; k < d; ++k) out[k] += pj * r[k];
    }
}

}  // namespace sleepyco
