#include "sleepyco/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sleepyco {

namespace {

void check_range(const TransformRange& r, const char* name) {
    if (r.prob < 0.0 || r.prob > 1.0)
        throw std::invalid_argument(std::string("augmentation: ") + name +
                                    " probability outside [0,1]");
    if (r.min_v > r.max_v)
        throw std::invalid_argument(std::string("augmentation: ") + name +
                                    " has min > max");
}

}  // namespace

void AugmentationConfig::validate() const {
    check_range(amplitude_scale, "amplitude_scale");
    check_range(time_shift, "time_shift");
    check_range(amplitude_shift, "amplitude_shift");
    check_range(zero_mask, "zero_mask");
    check_range(gaussian_noise, "gaussian_noise");
    check_range(band_stop, "band_stop");
    if (band_stop.min_v < 0.5 || band_stop.max_v > 30.0)
        throw std::invalid_argument(
            "augmentation: band_stop lower bound must stay within [0.5, 30] Hz");
}

// ---------------------------------------------------------------------------
// Butterworth band-stop (2nd-order prototype -> 4th-order digital filter)
// ---------------------------------------------------------------------------

IirCoeffs butterworth_bandstop(double f_lo, double f_hi, double sample_rate) {
    if (!(f_lo > 0.0 && f_hi > f_lo && f_hi < sample_rate / 2.0))
        throw std::invalid_argument("band_stop: band [" + std::to_string(f_lo) +
                                    ", " + std::to_string(f_hi) +
                                    "] Hz outside (0, " +
                                    std::to_string(sample_rate / 2.0) + ") Hz");
    // Prewarped band edges; with this warping the bilinear substitution is
    // s = (1 - z^-1)/(1 + z^-1).
    const double w1 = std::tan(M_PI * f_lo / sample_rate);
    const double w2 = std::tan(M_PI * f_hi / sample_rate);
    const double w0sq = w1 * w2;
    const double bw = w2 - w1;

    // H(s) = (s^2+w0^2)^2 / ((s^2+w0^2)^2 + sqrt(2) bw s (s^2+w0^2) + bw^2 s^2)
    // After substitution and clearing (1+z)^4, with
    // A(z) = (1-z)^2 + w0^2 (1+z)^2 (quadratic in z = z^-1):
    const std::array<double, 3> A{1.0 + w0sq, 2.0 * (w0sq - 1.0), 1.0 + w0sq};
    // (1 - z^2) and its square:
    const std::array<double, 3> S{1.0, 0.0, -1.0};

    auto conv = [](const auto& p, const auto& q) {
        std::array<double, 5> r{};
        for (std::size_t i = 0; i < p.size(); ++i)
            for (std::size_t j = 0; j < q.size(); ++j) r[i + j] += p[i] * q[j];
        return r;
    };
    const std::array<double, 5> numer = conv(A, A);          // A^2
    const std::array<double, 5> cross = conv(S, A);          // (1-z^2) A
    const std::array<double, 5> ssq = conv(S, S);            // (1-z^2)^2

    IirCoeffs c;
    const double k1 = std::sqrt(2.0) * bw;
    const double k2 = bw * bw;
    for (int i = 0; i < 5; ++i) {
        c.b[i] = numer[i];
        c.a[i] = numer[i] + k1 * cross[i] + k2 * ssq[i];
    }
    const double a0 = c.a[0];
    for (int i = 0; i < 5; ++i) {
        c.b[i] /= a0;
        c.a[i] /= a0;
    }
    return c;
}

std::vector<double> iir_filter(const IirCoeffs& c, const std::vector<double>& x) {
    // direct form II transposed, zero initial state
    std::vector<double> y(x.size());
    double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
        const double xn = x[n];
        const double yn = c.b[0] * xn + s1;
        s1 = c.b[1] * xn - c.a[1] * yn + s2;
        s2 = c.b[2] * xn - c.a[2] * yn + s3;
        s3 = c.b[3] * xn - c.a[3] * yn + s4;
        s4 = c.b[4] * xn - c.a[4] * yn;
        y[n] = yn;
    }
    return y;
}

std::vector<double> filtfilt(const IirCoeffs& c, const std::vector<double>& x) {
    std::vector<double> y = iir_filter(c, x);
    std::reverse(y.begin(), y.end());
    y = iir_filter(c, y);
    std::reverse(y.begin(), y.end());
    return y;
}

std::vector<double> band_stop(const std::vector<double>& x, double lower_hz,
                              double sample_rate) {
    const IirCoeffs c =
        butterworth_bandstop(lower_hz, lower_hz + kBandStopWidthHz, sample_rate);
    return filtfilt(c, x);
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

std::vector<double> apply_pipeline(const std::vector<double>& x,
                                   const AugmentationConfig& cfg, RngStream& rng) {
    cfg.validate();
    if (x.size() != kAugmentSamples)
        throw std::invalid_argument("augmentation: expected 3000 samples, got " +
                                    std::to_string(x.size()));
    std::vector<double> y = x;

    if (rng.bernoulli(cfg.amplitude_scale.prob)) {
        const double s = rng.uniform(cfg.amplitude_scale.min_v,
                                     cfg.amplitude_scale.max_v);
        for (double& v : y) v *= s;
    }
    if (rng.bernoulli(cfg.time_shift.prob)) {
        // vacated samples are zero-filled, shifted-out samples discarded
        const long shift = rng.uniform_int(static_cast<long>(cfg.time_shift.min_v),
                                           static_cast<long>(cfg.time_shift.max_v));
        std::vector<double> shifted(y.size(), 0.0);
        const long n = static_cast<long>(y.size());
        for (long t = 0; t < n; ++t) {
            const long src = t - shift;
            if (src >= 0 && src < n) shifted[t] = y[src];
        }
        y = std::move(shifted);
    }
    if (rng.bernoulli(cfg.amplitude_shift.prob)) {
        const double off = rng.uniform(cfg.amplitude_shift.min_v,
                                       cfg.amplitude_shift.max_v);
        for (double& v : y) v += off;
    }
    if (rng.bernoulli(cfg.zero_mask.prob)) {
        const long len = rng.uniform_int(static_cast<long>(cfg.zero_mask.min_v),
                                         static_cast<long>(cfg.zero_mask.max_v));
        if (len > 0) {
            const long start =
                rng.uniform_int(0, static_cast<long>(y.size()) - len);
            std::fill(y.begin() + start, y.begin() + start + len, 0.0);
        }
    }
    if (rng.bernoulli(cfg.gaussian_noise.prob)) {
        const double sigma = rng.uniform(cfg.gaussian_noise.min_v,
                                         cfg.gaussian_noise.max_v);
        for (double& v : y) v += sigma * rng.normal();
    }
    if (rng.bernoulli(cfg.band_stop.prob)) {
        const double lo = rng.uniform(cfg.band_stop.min_v, cfg.band_stop.max_v);
        y = band_stop(y, lo, kAugmentSampleRate);
    }
    return y;
}

}  // namespace sleepyco
